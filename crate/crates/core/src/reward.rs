//! The four structured reward components and their composition.
//!
//! ```text
//! total = r_con + r_acc + [anomalous] * (r_loc + r_type)            (Indicator)
//! total = r_con + r_acc + [anomalous] * r_acc * (r_loc + r_type)    (IndicatorAndCorrect)
//! total = r_acc                                                     (AccuracyOnly)
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{ConfigError, RewardError};
use crate::location::{map_location, GridSpec};
use crate::parser::{self, Answer, ExtractionMode, ParseOutcome, PatternKind};
use crate::taxonomy::{MatchLevel, TypeTaxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn expected_pattern(self) -> PatternKind {
        match self {
            Label::Normal => PatternKind::Normal,
            Label::Anomalous => PatternKind::Abnormal,
        }
    }

    pub fn expected_answer(self) -> Answer {
        match self {
            Label::Normal => Answer::No,
            Label::Anomalous => Answer::Yes,
        }
    }

    pub fn from_answer(answer: Answer) -> Self {
        match answer {
            Answer::Yes => Label::Anomalous,
            Answer::No => Label::Normal,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Normal => Label::Anomalous,
            Label::Anomalous => Label::Normal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Label::Normal),
            "anomalous" | "abnormal" => Ok(Label::Anomalous),
            other => Err(format!("unknown label '{other}', expected normal or anomalous")),
        }
    }
}

/// Per-sample reference annotation, with the location already placed on a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    label: Label,
    location_cell: Option<u32>,
    type_label: Option<String>,
    coarse_category: Option<String>,
}

impl GroundTruth {
    pub fn normal() -> Self {
        GroundTruth {
            label: Label::Normal,
            location_cell: None,
            type_label: None,
            coarse_category: None,
        }
    }

    pub fn anomalous(location_cell: u32, type_label: impl Into<String>) -> Self {
        GroundTruth {
            label: Label::Anomalous,
            location_cell: Some(location_cell),
            type_label: Some(type_label.into()),
            coarse_category: None,
        }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.coarse_category = Some(category.into());
        self
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn location_cell(&self) -> Option<u32> {
        self.location_cell
    }

    pub fn type_label(&self) -> Option<&str> {
        self.type_label.as_deref()
    }

    pub fn coarse_category(&self) -> Option<&str> {
        self.coarse_category.as_deref()
    }

    pub fn is_anomalous(&self) -> bool {
        self.label == Label::Anomalous
    }
}

/// Ground truth as written in files and requests. The location may be given
/// as text, which is resolved through the same grid mapping as predictions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSpec {
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_cell: Option<u32>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub type_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl GroundTruthSpec {
    pub fn resolve(&self, grid: GridSpec) -> Result<GroundTruth, ConfigError> {
        let bad = |m: String| ConfigError::GroundTruth(m);
        let label = self.label.ok_or_else(|| bad("label is required".into()))?;
        match label {
            Label::Normal => {
                if self.location.is_some() || self.location_cell.is_some() || self.type_label.is_some() {
                    return Err(bad("normal samples carry no location or type".into()));
                }
                Ok(GroundTruth {
                    label,
                    location_cell: None,
                    type_label: None,
                    coarse_category: self.category.clone(),
                })
            }
            Label::Anomalous => {
                let from_text = match &self.location {
                    Some(text) => Some(map_location(text, grid).ok_or_else(|| {
                        bad(format!("location '{text}' does not resolve on the {grid} grid"))
                    })?),
                    None => None,
                };
                if let Some(cell) = self.location_cell {
                    if cell >= grid.cells() {
                        return Err(bad(format!("location_cell {cell} outside the {grid} grid")));
                    }
                    if from_text.is_some_and(|c| c != cell) {
                        return Err(bad("location and location_cell disagree".into()));
                    }
                }
                let cell = from_text
                    .or(self.location_cell)
                    .ok_or_else(|| bad("anomalous samples need a location".into()))?;
                let ty = self
                    .type_label
                    .as_deref()
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| bad("anomalous samples need a type".into()))?;
                Ok(GroundTruth {
                    label,
                    location_cell: Some(cell),
                    type_label: Some(ty.to_string()),
                    coarse_category: self.category.clone(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Full,
    AccuracyOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    #[default]
    Indicator,
    IndicatorAndCorrect,
}

macro_rules! snake_enum_fromstr {
    ($ty:ty, $($name:literal => $val:expr),+) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
                    $($name => Ok($val),)+
                    other => Err(format!("unknown value '{other}'")),
                }
            }
        }
    };
}

snake_enum_fromstr!(RewardMode, "full" => RewardMode::Full, "accuracy_only" => RewardMode::AccuracyOnly);
snake_enum_fromstr!(Gating, "indicator" => Gating::Indicator, "indicator_and_correct" => Gating::IndicatorAndCorrect);

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_con: f64,
    pub r_acc: f64,
    pub r_loc: f64,
    pub r_type: f64,
    pub total: f64,
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// 1 iff `raw` follows the pattern dictated by the ground-truth label.
pub fn consistency_reward(raw: &str, gt: &GroundTruth) -> f64 {
    indicator(parser::matches_pattern(raw, gt.label.expected_pattern()))
}

pub fn accuracy_reward(pred: Option<Answer>, gt: &GroundTruth) -> f64 {
    indicator(pred.is_some_and(|a| Label::from_answer(a) == gt.label))
}

pub fn location_reward(
    pred_location: Option<&str>,
    gt: &GroundTruth,
    grid: GridSpec,
) -> Result<f64, RewardError> {
    let Some(gt_cell) = gt.location_cell.filter(|_| gt.is_anomalous()) else {
        return Err(RewardError::NotAnomalous);
    };
    let pred_cell = pred_location.and_then(|l| map_location(l, grid));
    Ok(indicator(pred_cell == Some(gt_cell)))
}

pub fn type_match_level(
    pred: &str,
    gt_type: &str,
    tax: &TypeTaxonomy,
) -> Result<MatchLevel, ConfigError> {
    tax.match_level(pred, gt_type)
}

pub fn type_reward(
    pred: Option<&str>,
    gt: &GroundTruth,
    tax: &TypeTaxonomy,
) -> Result<f64, RewardError> {
    let Some(gt_type) = gt.type_label.as_deref().filter(|_| gt.is_anomalous()) else {
        return Err(RewardError::NotAnomalous);
    };
    let level = match pred {
        Some(p) => tax.match_level(p, gt_type)?,
        None => {
            if !tax.is_canonical(gt_type) {
                return Err(ConfigError::UnknownType(gt_type.to_string()).into());
            }
            MatchLevel::None
        }
    };
    Ok(level.reward())
}

pub fn total_reward(
    raw: &str,
    gt: &GroundTruth,
    grid: GridSpec,
    tax: &TypeTaxonomy,
    mode: RewardMode,
    gating: Gating,
) -> Result<RewardBreakdown, RewardError> {
    let outcome = parser::parse(raw);
    score_parsed(raw, &outcome, gt, grid, tax, mode, gating)
}

fn score_parsed(
    raw: &str,
    outcome: &ParseOutcome,
    gt: &GroundTruth,
    grid: GridSpec,
    tax: &TypeTaxonomy,
    mode: RewardMode,
    gating: Gating,
) -> Result<RewardBreakdown, RewardError> {
    let response = outcome.response();
    let r_con = indicator(response.is_some_and(|r| r.pattern == gt.label.expected_pattern()));
    let pred = match response {
        Some(r) => Some(r.answer),
        None => parser::extract_answer(raw, ExtractionMode::Structured),
    };
    let r_acc = accuracy_reward(pred, gt);

    let (r_loc, r_type) = if gt.is_anomalous() {
        let loc = response.and_then(|r| r.location.as_deref());
        let ty = response.and_then(|r| r.anomaly_type.as_deref());
        (location_reward(loc, gt, grid)?, type_reward(ty, gt, tax)?)
    } else {
        (0.0, 0.0)
    };

    let total = match mode {
        RewardMode::AccuracyOnly => r_acc,
        RewardMode::Full => {
            let gate = match gating {
                Gating::Indicator => indicator(gt.is_anomalous()),
                Gating::IndicatorAndCorrect => indicator(gt.is_anomalous()) * r_acc,
            };
            r_con + r_acc + gate * (r_loc + r_type)
        }
    };
    Ok(RewardBreakdown {
        r_con,
        r_acc,
        r_loc,
        r_type,
        total,
    })
}

/// Scores one rollout and reports the parse status the score was computed from.
pub fn score_rollout(
    raw: &str,
    gt: &GroundTruth,
    grid: GridSpec,
    tax: &TypeTaxonomy,
    mode: RewardMode,
    gating: Gating,
) -> Result<ScoredRollout, RewardError> {
    let outcome = parser::parse(raw);
    let breakdown = score_parsed(raw, &outcome, gt, grid, tax, mode, gating)?;
    let parse = match outcome {
        ParseOutcome::Structured(r) => Ok(r.pattern),
        ParseOutcome::Malformed(m) => Err(m),
    };
    Ok(ScoredRollout { breakdown, parse })
}

/// Resolves a ground-truth spec on `grid` and checks its type against `tax`.
pub fn resolve_ground_truth(
    spec: &GroundTruthSpec,
    grid: GridSpec,
    tax: &TypeTaxonomy,
) -> Result<GroundTruth, ConfigError> {
    let gt = spec.resolve(grid)?;
    if let Some(ty) = gt.type_label() {
        if !tax.is_canonical(ty) {
            return Err(ConfigError::UnknownType(ty.to_string()));
        }
    }
    Ok(gt)
}

/// Immutable scoring configuration bundling grid, taxonomy, mode and gating.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEngine {
    pub grid: GridSpec,
    pub taxonomy: TypeTaxonomy,
    pub mode: RewardMode,
    pub gating: Gating,
}

impl Default for RewardEngine {
    fn default() -> Self {
        RewardEngine {
            grid: GridSpec::default(),
            taxonomy: TypeTaxonomy::default(),
            mode: RewardMode::Full,
            gating: Gating::Indicator,
        }
    }
}

/// Breakdown together with the parse status it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRollout {
    pub breakdown: RewardBreakdown,
    pub parse: Result<PatternKind, parser::MalformedReport>,
}

impl RewardEngine {
    pub fn new(grid: GridSpec, taxonomy: TypeTaxonomy, mode: RewardMode, gating: Gating) -> Self {
        RewardEngine { grid, taxonomy, mode, gating }
    }

    pub fn score(&self, raw: &str, gt: &GroundTruth) -> Result<RewardBreakdown, RewardError> {
        total_reward(raw, gt, self.grid, &self.taxonomy, self.mode, self.gating)
    }

    pub fn score_detailed(&self, raw: &str, gt: &GroundTruth) -> Result<ScoredRollout, RewardError> {
        score_rollout(raw, gt, self.grid, &self.taxonomy, self.mode, self.gating)
    }

    /// Resolves a ground-truth spec on this engine's grid and checks its type
    /// against the taxonomy.
    pub fn resolve(&self, spec: &GroundTruthSpec) -> Result<GroundTruth, ConfigError> {
        resolve_ground_truth(spec, self.grid, &self.taxonomy)
    }

    /// Upper bound of the total reward for a sample with this label.
    pub fn max_total(&self, label: Label) -> f64 {
        match (self.mode, label) {
            (RewardMode::AccuracyOnly, _) => 1.0,
            (RewardMode::Full, Label::Normal) => 2.0,
            (RewardMode::Full, Label::Anomalous) => 4.0,
        }
    }
}
