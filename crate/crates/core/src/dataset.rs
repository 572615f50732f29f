//! Dataset validation, stage splitting, stratified subsampling and summary
//! counts.
//!
//! Dataset file: one JSON object per line,
//! `{"image", "prompt", "target", "ground_truth": {...}, "stage"?}` where
//! `stage` is `pa_sft` or `sc_grpo`. Images are opaque references.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};

use crate::location::map_location;
use crate::parser::{parse, ParseOutcome};
use crate::reward::{GroundTruthSpec, Label, RewardEngine};
use crate::taxonomy::MatchLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PaSft,
    ScGrpo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSample {
    pub image: String,
    pub prompt: String,
    pub target: String,
    pub ground_truth: GroundTruthSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ParseFailure,
    PatternMismatch,
    AnswerMismatch,
    UnresolvableLocation,
    LocationMismatch,
    UnknownType,
    TypeMismatch,
    GroundTruth,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::ParseFailure => "parse_failure",
            Rule::PatternMismatch => "pattern_mismatch",
            Rule::AnswerMismatch => "answer_mismatch",
            Rule::UnresolvableLocation => "unresolvable_location",
            Rule::LocationMismatch => "location_mismatch",
            Rule::UnknownType => "unknown_type",
            Rule::TypeMismatch => "type_mismatch",
            Rule::GroundTruth => "ground_truth",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampleViolation {
    pub field: &'static str,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for SampleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.field, self.rule, self.message)
    }
}

fn violation(field: &'static str, rule: Rule, message: impl Into<String>) -> SampleViolation {
    SampleViolation { field, rule, message: message.into() }
}

/// All invariant violations of one sample; empty when the sample is valid.
pub fn validate_sample(sample: &DatasetSample, engine: &RewardEngine) -> Vec<SampleViolation> {
    let mut out = Vec::new();
    let gt = match engine.resolve(&sample.ground_truth) {
        Ok(gt) => Some(gt),
        Err(e) => {
            out.push(violation("ground_truth", Rule::GroundTruth, e.to_string()));
            None
        }
    };
    let response = match parse(&sample.target) {
        ParseOutcome::Structured(r) => r,
        ParseOutcome::Malformed(m) => {
            out.push(violation("target", Rule::ParseFailure, m.to_string()));
            return out;
        }
    };

    // Checks that only need the target and, when known, the label.
    let label = sample.ground_truth.label;
    if let Some(label) = label {
        if response.pattern != label.expected_pattern() {
            out.push(violation(
                "target",
                Rule::PatternMismatch,
                format!("{:?} pattern for a {label} sample", response.pattern),
            ));
        }
        if response.answer != label.expected_answer() {
            out.push(violation(
                "target.answer",
                Rule::AnswerMismatch,
                format!("answer {} for a {label} sample", response.answer.as_str()),
            ));
        }
    }
    if let Some(loc) = response.location.as_deref() {
        match map_location(loc, engine.grid) {
            None => out.push(violation(
                "target.location",
                Rule::UnresolvableLocation,
                format!("'{loc}' has no usable spatial keyword"),
            )),
            Some(cell) => {
                if let Some(want) = gt.as_ref().and_then(|g| g.location_cell()) {
                    if cell != want {
                        out.push(violation(
                            "target.location",
                            Rule::LocationMismatch,
                            format!("'{loc}' maps to cell {cell}, ground truth is cell {want}"),
                        ));
                    }
                }
            }
        }
    }
    if let Some(ty) = response.anomaly_type.as_deref() {
        if !engine.taxonomy.is_known(ty) {
            out.push(violation("target.type", Rule::UnknownType, format!("'{ty}' is not in the taxonomy")));
        } else if let Some(want) = gt.as_ref().and_then(|g| g.type_label()) {
            let level = engine.taxonomy.match_level(ty, want).unwrap_or(MatchLevel::None);
            if level > MatchLevel::Semantic {
                out.push(violation(
                    "target.type",
                    Rule::TypeMismatch,
                    format!("'{ty}' matches ground truth '{want}' only at level {level:?}"),
                ));
            }
        }
    }
    out
}

/// Validates every sample, spreading the work over the available cores.
/// Results are in input order.
pub fn validate_all(samples: &[DatasetSample], engine: &RewardEngine) -> Vec<Vec<SampleViolation>> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = samples.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| validate_sample(s, engine)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("validation worker panicked"))
            .collect()
    })
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("ratio must be in (0, 1), got {0}")]
    Ratio(f64),
    #[error("fraction must be in (0, 1], got {0}")]
    Fraction(f64),
    #[error("a ratio is required unless every sample carries a stage hint")]
    MissingRatio,
    #[error("stage hints conflict with ratio: {0}")]
    Conflict(String),
}

pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<DatasetSample>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let err = |message: String| DatasetError::Line { line: idx + 1, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_samples<'a, W: Write>(
    samples: impl IntoIterator<Item = &'a DatasetSample>,
    mut out: W,
) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Indices into the input, each list in input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageSplit {
    pub pa_sft: Vec<usize>,
    pub sc_grpo: Vec<usize>,
}

/// Partitions samples into the two training stages. Hinted samples keep
/// their hint; the rest are shuffled with `seed` and fill the stages so that
/// the supervised stage holds `round(ratio * N)` samples.
pub fn split_stages(samples: &[DatasetSample], ratio: Option<f64>, seed: u64) -> Result<StageSplit, DatasetError> {
    if let Some(r) = ratio {
        if !(r > 0.0 && r < 1.0) {
            return Err(DatasetError::Ratio(r));
        }
    }
    let mut split = StageSplit::default();
    let mut free = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match s.stage {
            Some(Stage::PaSft) => split.pa_sft.push(i),
            Some(Stage::ScGrpo) => split.sc_grpo.push(i),
            None => free.push(i),
        }
    }
    let Some(ratio) = ratio else {
        if free.is_empty() {
            return Ok(split);
        }
        return Err(DatasetError::MissingRatio);
    };
    let n = samples.len();
    let want_sft = (ratio * n as f64).round() as usize;
    if split.pa_sft.len() > want_sft || split.sc_grpo.len() > n - want_sft {
        return Err(DatasetError::Conflict(format!(
            "{} pa_sft and {} sc_grpo hints cannot meet {want_sft}/{} at ratio {ratio}",
            split.pa_sft.len(),
            split.sc_grpo.len(),
            n - want_sft
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    free.shuffle(&mut rng);
    let fill = want_sft - split.pa_sft.len();
    split.pa_sft.extend_from_slice(&free[..fill]);
    split.sc_grpo.extend_from_slice(&free[fill..]);
    split.pa_sft.sort_unstable();
    split.sc_grpo.sort_unstable();
    Ok(split)
}

fn stratum(sample: &DatasetSample) -> Option<Label> {
    sample.ground_truth.label
}

/// Seeded stratified sample without replacement of `round(fraction * N)`
/// samples. Per-label quotas use the largest-remainder method. Returns
/// indices in input order.
pub fn subsample(samples: &[DatasetSample], fraction: f64, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::Fraction(fraction));
    }
    let n = samples.len();
    let target = (fraction * n as f64).round() as usize;
    let mut strata: BTreeMap<Option<Label>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        strata.entry(stratum(s)).or_default().push(i);
    }
    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|members| {
            let exact = fraction * members.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // stable sort: ties go to the earlier stratum
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1));
    for &k in order.iter().take(target.saturating_sub(assigned)) {
        quotas[k].0 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(target);
    for (members, (quota, _)) in strata.into_values().zip(quotas) {
        let mut members = members;
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..quota.min(members.len())]);
    }
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub by_label: BTreeMap<String, usize>,
    pub by_type: BTreeMap<String, usize>,
    pub by_category: BTreeMap<String, usize>,
    pub by_cell: BTreeMap<u32, usize>,
    pub by_stage: BTreeMap<String, usize>,
    /// Samples whose ground truth does not resolve on the engine's grid and
    /// taxonomy; they are counted by label only.
    pub unresolved: usize,
}

pub fn stats(samples: &[DatasetSample], engine: &RewardEngine) -> DatasetStats {
    let mut st = DatasetStats { total: samples.len(), ..Default::default() };
    for s in samples {
        let label = s.ground_truth.label.map_or("unlabeled", Label::as_str);
        *st.by_label.entry(label.to_owned()).or_default() += 1;
        let stage = match s.stage {
            Some(Stage::PaSft) => "pa_sft",
            Some(Stage::ScGrpo) => "sc_grpo",
            None => "unassigned",
        };
        *st.by_stage.entry(stage.to_owned()).or_default() += 1;
        match engine.resolve(&s.ground_truth) {
            Ok(gt) => {
                if let Some(ty) = gt.type_label() {
                    *st.by_type.entry(ty.to_owned()).or_default() += 1;
                }
                if let Some(cat) = gt.type_label().and_then(|t| engine.taxonomy.category_of(t)) {
                    *st.by_category.entry(cat.to_owned()).or_default() += 1;
                }
                if let Some(cell) = gt.location_cell() {
                    *st.by_cell.entry(cell).or_default() += 1;
                }
            }
            Err(_) => st.unresolved += 1,
        }
    }
    st
}

impl DatasetStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "total      {}", self.total);
        let _ = writeln!(out, "unresolved {}", self.unresolved);
        let mut section = |name: &str, rows: Vec<(String, usize)>| {
            let _ = writeln!(out, "\n{name}");
            for (k, v) in rows {
                let _ = writeln!(out, "  {k:<24} {v:>8}");
            }
        };
        let strs = |m: &BTreeMap<String, usize>| m.iter().map(|(k, v)| (k.clone(), *v)).collect();
        section("label", strs(&self.by_label));
        section("stage", strs(&self.by_stage));
        section("type", strs(&self.by_type));
        section("category", strs(&self.by_category));
        section("cell", self.by_cell.iter().map(|(k, v)| (k.to_string(), *v)).collect());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{Answer, StructuredResponse};
    use std::collections::HashSet;

    fn anomalous(loc: &str, ty: &str) -> DatasetSample {
        DatasetSample {
            image: "img/a.png".into(),
            prompt: "Is there an anomaly?".into(),
            target: StructuredResponse::abnormal("a dent", loc, ty, Answer::Yes).render(),
            ground_truth: GroundTruthSpec {
                label: Some(Label::Anomalous),
                location: Some(loc.into()),
                type_label: Some(ty.into()),
                ..Default::default()
            },
            stage: None,
        }
    }

    fn normal() -> DatasetSample {
        DatasetSample {
            image: "img/n.png".into(),
            prompt: "Is there an anomaly?".into(),
            target: StructuredResponse::normal("clean", Answer::No).render(),
            ground_truth: GroundTruthSpec { label: Some(Label::Normal), ..Default::default() },
            stage: None,
        }
    }

    fn rules(s: &DatasetSample) -> Vec<Rule> {
        validate_sample(s, &RewardEngine::default()).into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn validation_examples() {
        assert!(rules(&anomalous("top left", "scratch")).is_empty());
        assert!(rules(&normal()).is_empty());

        let mut s = normal();
        s.target = StructuredResponse::abnormal("x", "top left", "scratch", Answer::No).render();
        assert_eq!(rules(&s), [Rule::PatternMismatch]);

        let mut s = anomalous("top left", "scratch");
        s.target = s.target.replace("top left", "somewhere");
        assert_eq!(rules(&s), [Rule::UnresolvableLocation]);

        let mut s = anomalous("top left", "scratch");
        s.target = s.target.replace("<type>scratch", "<type>wobble");
        assert_eq!(rules(&s), [Rule::UnknownType]);

        let mut s = anomalous("top left", "scratch");
        s.target = s.target.replace("<type>scratch", "<type>scrape");
        assert!(rules(&s).is_empty(), "synonyms are accepted");
        s.target = s.target.replace("<type>scrape", "<type>hole");
        assert_eq!(rules(&s), [Rule::TypeMismatch]);

        let mut s = anomalous("top left", "scratch");
        s.target.push_str(" extra");
        assert_eq!(rules(&s), [Rule::ParseFailure]);

        let mut s = anomalous("top left", "scratch");
        s.ground_truth.type_label = Some("wobble".into());
        assert_eq!(rules(&s), [Rule::GroundTruth]);
    }

    fn many(n: usize) -> Vec<DatasetSample> {
        (0..n).map(|i| if i % 2 == 0 { normal() } else { anomalous("bottom right", "hole") }).collect()
    }

    #[test]
    fn split_large_dataset_exact_counts() {
        let samples = vec![normal(); 5900];
        let s = split_stages(&samples, Some(2900.0 / 5900.0), 1).unwrap();
        assert_eq!((s.pa_sft.len(), s.sc_grpo.len()), (2900, 3000));
    }

    #[test]
    fn split_is_deterministic_partition() {
        let samples = many(10);
        let a = split_stages(&samples, Some(0.5), 42).unwrap();
        assert_eq!(a, split_stages(&samples, Some(0.5), 42).unwrap());
        let all: HashSet<usize> = a.pa_sft.iter().chain(&a.sc_grpo).copied().collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn split_hints() {
        let mut samples = many(4);
        for s in &mut samples {
            s.stage = Some(Stage::PaSft);
        }
        let s = split_stages(&samples, None, 0).unwrap();
        assert_eq!((s.pa_sft.len(), s.sc_grpo.len()), (4, 0));
        assert!(matches!(split_stages(&samples, Some(0.5), 0), Err(DatasetError::Conflict(_))));
        samples[0].stage = None;
        assert_eq!(split_stages(&samples, None, 0), Err(DatasetError::MissingRatio));
        let s = split_stages(&samples, Some(0.75), 0).unwrap();
        assert_eq!((s.pa_sft, s.sc_grpo), (vec![1, 2, 3], vec![0]));
        assert_eq!(split_stages(&samples, Some(1.0), 0), Err(DatasetError::Ratio(1.0)));
    }

    #[test]
    fn subsample_examples() {
        let samples = many(100);
        assert_eq!(subsample(&samples, 1.0, 3).unwrap(), (0..100).collect::<Vec<_>>());
        let sub = subsample(&samples, 0.2, 3).unwrap();
        assert_eq!(sub.len(), 20);
        assert_eq!(sub.iter().filter(|&&i| i % 2 == 0).count(), 10);
        assert_eq!(sub, subsample(&samples, 0.2, 3).unwrap());
        assert_ne!(sub, subsample(&samples, 0.2, 4).unwrap());
        assert_eq!(subsample(&samples, 0.0, 3), Err(DatasetError::Fraction(0.0)));
        assert_eq!(subsample(&samples, 1.5, 3), Err(DatasetError::Fraction(1.5)));
    }

    #[test]
    fn stats_tally() {
        let e = RewardEngine::default();
        assert_eq!(stats(&[], &e).total, 0);
        assert!(stats(&[], &e).by_label.is_empty());
        let mut samples = vec![
            normal(),
            normal(),
            anomalous("top left", "scratch"),
            anomalous("top left", "hole"),
            anomalous("center", "scratch"),
            anomalous("nowhere", "scratch"),
        ];
        samples[0].stage = Some(Stage::ScGrpo);
        let st = stats(&samples, &e);
        assert_eq!(st.by_label["normal"], 2);
        assert_eq!(st.by_label["anomalous"], 4);
        assert_eq!(st.by_label.values().sum::<usize>(), 6);
        assert_eq!(st.unresolved, 1);
        assert_eq!(st.by_type["scratch"], 2);
        assert_eq!(st.by_category["scratch"], 2);
        assert_eq!(st.by_cell[&0], 2);
        assert_eq!(st.by_cell[&4], 1);
        assert_eq!(st.by_stage["sc_grpo"], 1);
        assert!(st.to_table().contains("scratch"));
    }

    #[test]
    fn file_round_trip() {
        let samples = many(3);
        let mut buf = Vec::new();
        write_samples(&samples, &mut buf).unwrap();
        assert_eq!(read_samples(buf.as_slice()).unwrap(), samples);
        assert!(matches!(read_samples("{}\n".as_bytes()), Err(DatasetError::Line { line: 1, .. })));
        let v = validate_all(&samples, &RewardEngine::default());
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(Vec::is_empty));
    }
}
