//! Structured reward scoring and group-relative policy optimization for
//! industrial anomaly-detection outputs.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod location;
pub mod parser;
pub mod policy;
pub mod reward;
pub mod service;
pub mod sft;
pub mod task;
pub mod taxonomy;

pub use error::{ConfigError, OptimError, RewardError};
pub use location::{map_location, GridSpec};
pub use parser::{extract_answer, matches_pattern, parse, Answer, ExtractionMode, ParseOutcome, PatternKind, StructuredResponse};
pub use reward::{total_reward, Gating, GroundTruth, GroundTruthSpec, Label, RewardBreakdown, RewardEngine, RewardMode};
pub use taxonomy::{MatchLevel, TypeTaxonomy};
