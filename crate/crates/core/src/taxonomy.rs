//! Anomaly type taxonomy and multi-level type matching.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::error::ConfigError;

pub const DEFAULT_TAXONOMY: &str = include_str!("../data/default_taxonomy.txt");
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.5;

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Word-token Jaccard similarity in `[0, 1]`. Two token-free strings score 0.
pub fn token_similarity(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Match levels, strongest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLevel {
    Exact,
    Semantic,
    Category,
    Fuzzy,
    Group,
    None,
}

impl MatchLevel {
    pub const ALL: [MatchLevel; 6] = [
        MatchLevel::Exact,
        MatchLevel::Semantic,
        MatchLevel::Category,
        MatchLevel::Fuzzy,
        MatchLevel::Group,
        MatchLevel::None,
    ];

    pub fn reward(self) -> f64 {
        match self {
            MatchLevel::Exact => 1.0,
            MatchLevel::Semantic => 0.85,
            MatchLevel::Category => 0.6,
            MatchLevel::Fuzzy => 0.4,
            MatchLevel::Group => 0.3,
            MatchLevel::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeTaxonomy {
    canonical: BTreeSet<String>,
    synonyms: HashMap<String, HashSet<String>>,
    category_of: HashMap<String, String>,
    group_of: BTreeMap<String, String>,
    fuzzy_threshold: f64,
}

impl Default for TypeTaxonomy {
    fn default() -> Self {
        TypeTaxonomy::parse(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }
}

impl TypeTaxonomy {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::TaxonomyLine {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Parses the line format `type | category | group | synonyms: a, b`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut tax = TypeTaxonomy {
            canonical: BTreeSet::new(),
            synonyms: HashMap::new(),
            category_of: HashMap::new(),
            group_of: BTreeMap::new(),
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
        };
        let mut pending_synonyms = Vec::new();

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| ConfigError::TaxonomyLine { line: line_no, message };
            let body = line.split('#').next().unwrap_or_default();
            if body.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split('|').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(err(format!("expected 3 or 4 '|'-separated fields, got {}", fields.len())));
            }
            let ty = normalize(fields[0]);
            let category = normalize(fields[1]);
            let group = normalize(fields[2]);
            if ty.is_empty() || category.is_empty() || group.is_empty() {
                return Err(err("type, category and group must be non-empty".into()));
            }
            if !tax.canonical.insert(ty.clone()) {
                return Err(err(format!("type '{ty}' defined twice")));
            }
            match tax.group_of.get(&category) {
                Some(g) if *g != group => {
                    return Err(err(format!(
                        "category '{category}' already belongs to group '{g}'"
                    )))
                }
                _ => {
                    tax.group_of.insert(category.clone(), group);
                }
            }
            tax.category_of.insert(ty.clone(), category.clone());

            if let Some(syn_field) = fields.get(3) {
                let list = syn_field
                    .strip_prefix("synonyms:")
                    .ok_or_else(|| err("fourth field must start with 'synonyms:'".into()))?;
                for syn in list.split(',').map(normalize).filter(|s| !s.is_empty()) {
                    if syn == ty {
                        return Err(err(format!("'{ty}' listed as its own synonym")));
                    }
                    pending_synonyms.push((line_no, ty.clone(), syn, category.clone()));
                }
            }
        }

        for (line, ty, syn, category) in pending_synonyms {
            // a synonym inherits its type's category unless it is itself canonical
            if !tax.canonical.contains(&syn) {
                match tax.category_of.get(&syn) {
                    Some(c) if *c != category => {
                        return Err(ConfigError::TaxonomyLine {
                            line,
                            message: format!("synonym '{syn}' spans categories '{c}' and '{category}'"),
                        })
                    }
                    _ => {
                        tax.category_of.insert(syn.clone(), category);
                    }
                }
            }
            tax.synonyms.entry(ty.clone()).or_default().insert(syn.clone());
            tax.synonyms.entry(syn).or_default().insert(ty);
        }
        Ok(tax)
    }

    pub fn with_fuzzy_threshold(mut self, threshold: f64) -> Result<Self, ConfigError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ConfigError::FuzzyThreshold(threshold));
        }
        self.fuzzy_threshold = threshold;
        Ok(self)
    }

    pub fn fuzzy_threshold(&self) -> f64 {
        self.fuzzy_threshold
    }

    pub fn is_canonical(&self, ty: &str) -> bool {
        self.canonical.contains(&normalize(ty))
    }

    /// Canonical type or synonym of one.
    pub fn is_known(&self, ty: &str) -> bool {
        self.category_of(ty).is_some()
    }

    pub fn canonical_types(&self) -> impl Iterator<Item = &str> {
        self.canonical.iter().map(String::as_str)
    }

    pub fn category_of(&self, ty: &str) -> Option<&str> {
        self.category_of.get(&normalize(ty)).map(String::as_str)
    }

    pub fn group_of(&self, ty: &str) -> Option<&str> {
        self.category_of(ty)
            .and_then(|c| self.group_of.get(c))
            .map(String::as_str)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.group_of.keys().map(String::as_str)
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.synonyms
            .get(&normalize(a))
            .is_some_and(|set| set.contains(&normalize(b)))
    }

    /// First matching level in the order exact, semantic, category, fuzzy,
    /// group. `gt_type` must be canonical.
    pub fn match_level(&self, pred: &str, gt_type: &str) -> Result<MatchLevel, ConfigError> {
        let gt = normalize(gt_type);
        if !self.canonical.contains(&gt) {
            return Err(ConfigError::UnknownType(gt_type.to_string()));
        }
        let pred = normalize(pred);
        if pred == gt {
            return Ok(MatchLevel::Exact);
        }
        if self.are_synonyms(&pred, &gt) {
            return Ok(MatchLevel::Semantic);
        }
        if let (Some(a), Some(b)) = (self.category_of(&pred), self.category_of(&gt)) {
            if a == b {
                return Ok(MatchLevel::Category);
            }
        }
        if token_similarity(&pred, &gt) >= self.fuzzy_threshold {
            return Ok(MatchLevel::Fuzzy);
        }
        if let (Some(a), Some(b)) = (self.group_of(&pred), self.group_of(&gt)) {
            if a == b {
                return Ok(MatchLevel::Group);
            }
        }
        Ok(MatchLevel::None)
    }

    /// Stable text form used for config digests.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for ty in &self.canonical {
            let cat = &self.category_of[ty];
            let mut syns: Vec<&String> = self
                .synonyms
                .get(ty)
                .map(|s| s.iter().collect())
                .unwrap_or_default();
            syns.sort();
            out.push_str(&format!(
                "{ty} | {cat} | {} | synonyms: {}\n",
                self.group_of[cat],
                syns.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        out.push_str(&format!("fuzzy_threshold={}\n", self.fuzzy_threshold));
        out
    }
}
