//! Synthetic tasks for the optimization loop, the grid-size ablation, and
//! the generated supervised dataset.
//!
//! Task file: one JSON object per line,
//! `{"id": "...", "ground_truth": {...}, "candidates": ["<raw response>", ...]}`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{ConfigError, OptimError};
use crate::grpo::{run_sc_grpo, score_table, TrainConfig, TrainOutcome};
use crate::location::GridSpec;
use crate::parser;
use crate::policy::ToyPolicy;
use crate::reward::{location_reward, GroundTruth, GroundTruthSpec, Label, RewardEngine};
use crate::sft::{render_target, run_pa_sft, SequenceModel, Vocab};

pub const SYNTHETIC_TASK: &str = include_str!("../data/synthetic_task.jsonl");
pub const ABLATION_TASK: &str = include_str!("../data/ablation_task.jsonl");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    pub ground_truth: GroundTruthSpec,
    pub candidates: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("task file has no records")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub records: Vec<TaskRecord>,
}

impl Task {
    pub fn parse(text: &str) -> Result<Self, TaskError> {
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: TaskRecord = serde_json::from_str(line).map_err(|e| TaskError::Line {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if rec.candidates.is_empty() {
                return Err(TaskError::Line { line: idx + 1, message: "no candidates".into() });
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(TaskError::Empty);
        }
        Ok(Task { records })
    }

    pub fn synthetic() -> Self {
        Self::parse(SYNTHETIC_TASK).expect("shipped task parses")
    }

    pub fn ablation() -> Self {
        Self::parse(ABLATION_TASK).expect("shipped task parses")
    }

    pub fn action_table(&self) -> Vec<Vec<String>> {
        self.records.iter().map(|r| r.candidates.clone()).collect()
    }

    /// Ground truth per state, resolved on the engine's grid.
    pub fn dataset(&self, engine: &RewardEngine) -> Result<Vec<(usize, GroundTruth)>, ConfigError> {
        self.records
            .iter()
            .enumerate()
            .map(|(s, r)| {
                engine.resolve(&r.ground_truth).map(|gt| (s, gt)).map_err(|e| {
                    ConfigError::GroundTruth(format!("record '{}': {e}", r.id))
                })
            })
            .collect()
    }

    /// Targets for the supervised stage: every candidate that follows the
    /// tag pattern its state's label requires. The supervised stage thus
    /// learns the output format; which consistent candidate is correct is
    /// left to the reinforcement stage.
    pub fn sft_targets(&self, engine: &RewardEngine) -> Result<Vec<(usize, Label, String)>, ConfigError> {
        let dataset = self.dataset(engine)?;
        let mut out = Vec::new();
        for ((s, gt), rec) in dataset.iter().zip(&self.records) {
            for c in &rec.candidates {
                if parser::matches_pattern(c, gt.label().expected_pattern()) {
                    out.push((*s, gt.label(), c.clone()));
                }
            }
        }
        Ok(out)
    }
}

/// Trains a uniform policy on `task` with `engine` as the scorer.
pub fn train_on_task(
    task: &Task,
    engine: &RewardEngine,
    config: &TrainConfig,
) -> Result<TrainOutcome, OptimError> {
    let dataset = task.dataset(engine)?;
    let policy = ToyPolicy::uniform(task.action_table())?;
    train_from(engine, &dataset, &policy, config)
}

/// Trains `policy` on an already resolved dataset.
pub fn train_from(
    engine: &RewardEngine,
    dataset: &[(usize, GroundTruth)],
    policy: &ToyPolicy,
    config: &TrainConfig,
) -> Result<TrainOutcome, OptimError> {
    // the dataset was resolved against this engine's taxonomy, so scoring
    // cannot fail on an unknown type
    run_sc_grpo(
        dataset,
        policy,
        |raw, gt| engine.score(raw, gt).map(|b| b.total).unwrap_or(0.0),
        config,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridAblationRow {
    pub k: u32,
    pub max_reward: f64,
    pub initial_reward: f64,
    pub final_reward: f64,
    /// Share of location-bearing candidates on anomalous states whose
    /// location lands in the ground-truth cell.
    pub location_hit_rate: f64,
    /// Expected location reward of the trained policy over anomalous states.
    pub final_location_reward: f64,
}

/// Runs the optimization loop once per grid size.
pub fn grid_ablation(
    task: &Task,
    base: &RewardEngine,
    ks: &[u32],
    config: &TrainConfig,
) -> Result<Vec<GridAblationRow>, OptimError> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let engine = RewardEngine { grid: GridSpec::new(k)?, ..base.clone() };
        let dataset = task.dataset(&engine)?;
        let policy = ToyPolicy::uniform(task.action_table())?;
        let outcome = train_from(&engine, &dataset, &policy, config)?;

        let loc = score_table(&dataset, &policy, |raw, gt| {
            if !gt.is_anomalous() {
                return f64::NAN;
            }
            let response = parser::parse(raw).into_response();
            match response.as_ref().and_then(|r| r.location.as_deref()) {
                Some(l) => location_reward(Some(l), gt, engine.grid).unwrap_or(0.0),
                None => f64::NAN,
            }
        })?;
        let (mut hits, mut total) = (0usize, 0usize);
        for row in &loc {
            for v in row.iter().filter(|v| !v.is_nan()) {
                total += 1;
                if *v == 1.0 {
                    hits += 1;
                }
            }
        }
        let mut final_loc = 0.0;
        let mut anomalous = 0usize;
        for ((s, gt), row) in dataset.iter().zip(&loc) {
            if !gt.is_anomalous() {
                continue;
            }
            anomalous += 1;
            let p = outcome.policy.probs(*s)?;
            final_loc += p.iter().zip(row).map(|(p, v)| if v.is_nan() { 0.0 } else { p * v }).sum::<f64>();
        }

        rows.push(GridAblationRow {
            k,
            max_reward: outcome.max_mean_reward,
            initial_reward: outcome.curve.first().map(|c| c.mean_reward).unwrap_or(f64::NAN),
            final_reward: outcome.final_mean_reward,
            location_hit_rate: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
            final_location_reward: if anomalous == 0 { 0.0 } else { final_loc / anomalous as f64 },
        });
    }
    Ok(rows)
}

pub fn grid_ablation_table(rows: &[GridAblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>3}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}", "k", "max", "initial", "final", "loc_hits", "final_loc");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>3}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}",
            r.k, r.max_reward, r.initial_reward, r.final_reward, r.location_hit_rate, r.final_location_reward
        );
    }
    out
}

pub fn grid_ablation_csv(rows: &[GridAblationRow]) -> String {
    let mut out = String::from("k,max_reward,initial_reward,final_reward,location_hit_rate,final_location_reward\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k, r.max_reward, r.initial_reward, r.final_reward, r.location_hit_rate, r.final_location_reward
        );
    }
    out
}

const THINK_WORDS: [&str; 16] = [
    "surface", "edge", "region", "texture", "coating", "seam", "corner", "housing", "pattern", "rim",
    "panel", "mark", "reflection", "contour", "shade", "joint",
];
const LOCATIONS: [&str; 9] = [
    "top left", "top", "top right", "left", "center", "right", "bottom left", "bottom", "bottom right",
];

/// A generated supervised dataset: `n` states, alternating labels, with
/// seeded reasoning text, locations and taxonomy types.
pub fn generated_sft_dataset(n: usize, seed: u64, engine: &RewardEngine) -> Vec<(usize, Label, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types: Vec<&str> = engine.taxonomy.canonical_types().collect();
    (0..n)
        .map(|s| {
            let len = rng.random_range(3..=6);
            let think = (0..len)
                .map(|_| *THINK_WORDS.choose(&mut rng).expect("non-empty"))
                .collect::<Vec<_>>()
                .join(" ");
            let label = if s % 2 == 0 { Label::Anomalous } else { Label::Normal };
            let loc = *LOCATIONS.choose(&mut rng).expect("non-empty");
            let ty = *types.choose(&mut rng).expect("taxonomy has types");
            (s, label, render_target(&think, label, Some(loc), Some(ty)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SftReport {
    pub samples: usize,
    pub initial_nll: f64,
    pub final_nll: f64,
    /// Share of greedy decodes that follow the pattern their label requires.
    pub consistency: f64,
}

impl SftReport {
    pub fn nll_reduction(&self) -> f64 {
        if self.initial_nll == 0.0 {
            0.0
        } else {
            1.0 - self.final_nll / self.initial_nll
        }
    }
}

/// Supervised stage on `data` from a uniform model; returns the trained model
/// and its report.
pub fn pa_sft(
    data: &[(usize, Label, String)],
    epochs: usize,
    learning_rate: f64,
) -> Result<(SequenceModel, SftReport), OptimError> {
    pa_sft_with_vocab(data, &[], epochs, learning_rate)
}

/// Like [`pa_sft`], with the vocabulary extended by every token of
/// `action_table`, so the model can score those candidates afterwards.
pub fn pa_sft_with_vocab(
    data: &[(usize, Label, String)],
    action_table: &[Vec<String>],
    epochs: usize,
    learning_rate: f64,
) -> Result<(SequenceModel, SftReport), OptimError> {
    let vocab = Vocab::from_texts(
        data.iter()
            .map(|(_, _, t)| t.as_str())
            .chain(action_table.iter().flatten().map(String::as_str)),
    );
    let model = SequenceModel::new(vocab);
    let samples = data
        .iter()
        .map(|(s, _, t)| model.sample(*s, t))
        .collect::<Result<Vec<_>, _>>()?;
    let initial_nll = model.mean_nll(&samples)?;
    let trained = run_pa_sft(&model, &samples, epochs, learning_rate)?;
    let final_nll = trained.mean_nll(&samples)?;
    let max_len = samples.iter().map(|s| s.tokens.len()).max().unwrap_or(0) + 4;
    let consistent = data
        .iter()
        .filter(|(s, label, _)| {
            parser::matches_pattern(&trained.greedy_text(*s, max_len), label.expected_pattern())
        })
        .count();
    let report = SftReport {
        samples: data.len(),
        initial_nll,
        final_nll,
        consistency: if data.is_empty() { 0.0 } else { consistent as f64 / data.len() as f64 },
    };
    Ok((trained, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::RewardMode;

    #[test]
    fn shipped_tasks_load() {
        let e = RewardEngine::default();
        let t = Task::synthetic();
        assert_eq!(t.records.len(), 16);
        assert!(t.records.iter().all(|r| r.candidates.len() == 4));
        let d = t.dataset(&e).unwrap();
        assert_eq!(d.iter().filter(|(_, g)| g.is_anomalous()).count(), 8);
        let a = Task::ablation();
        assert_eq!(a.dataset(&e).unwrap().len(), 8);
    }

    #[test]
    fn exactly_one_perfect_candidate_per_state() {
        let e = RewardEngine::default();
        let t = Task::synthetic();
        let d = t.dataset(&e).unwrap();
        for ((_, gt), rec) in d.iter().zip(&t.records) {
            let best = e.max_total(gt.label());
            let perfect = rec
                .candidates
                .iter()
                .filter(|c| e.score(c, gt).unwrap().total == best)
                .count();
            assert_eq!(perfect, 1, "{}", rec.id);
        }
    }

    #[test]
    fn ablation_candidates_equally_accurate() {
        let e = RewardEngine { mode: RewardMode::AccuracyOnly, ..RewardEngine::default() };
        let t = Task::ablation();
        for ((_, gt), rec) in t.dataset(&e).unwrap().iter().zip(&t.records) {
            for c in &rec.candidates {
                assert_eq!(e.score(c, gt).unwrap().total, 1.0);
            }
        }
    }

    #[test]
    fn bad_task_lines() {
        assert!(matches!(Task::parse(""), Err(TaskError::Empty)));
        let err = Task::parse("{\"id\":\"a\",\"ground_truth\":{\"label\":\"normal\"},\"candidates\":[]}").unwrap_err();
        assert!(matches!(err, TaskError::Line { line: 1, .. }));
        assert!(matches!(Task::parse("\n{oops"), Err(TaskError::Line { line: 2, .. })));
    }

    #[test]
    fn generated_dataset_parses() {
        let e = RewardEngine::default();
        let data = generated_sft_dataset(20, 3, &e);
        assert_eq!(data.len(), 20);
        for (_, label, text) in &data {
            assert!(parser::matches_pattern(text, label.expected_pattern()));
        }
        assert_eq!(data, generated_sft_dataset(20, 3, &e));
    }

    #[test]
    fn supervised_stage_learns_the_patterns() {
        let e = RewardEngine::default();
        let data = generated_sft_dataset(50, 11, &e);
        let (_, report) = pa_sft(&data, 300, 10.0).unwrap();
        assert!(report.nll_reduction() >= 0.9, "{report:?}");
        assert!(report.consistency >= 0.95, "{report:?}");
    }

    #[test]
    fn supervised_prior_favors_consistent_candidates() {
        let t = Task::synthetic();
        let (model, _) = pa_sft_with_vocab(&t.sft_targets(&RewardEngine::default()).unwrap(), &t.action_table(), 300, 10.0).unwrap();
        let policy = crate::sft::policy_from_model(&model, t.action_table()).unwrap();
        let e = RewardEngine::default();
        let d = t.dataset(&e).unwrap();
        let scores = score_table(&d, &policy, |raw, gt| e.score(raw, gt).unwrap().r_con).unwrap();
        let uniform = ToyPolicy::uniform(t.action_table()).unwrap();
        let before = crate::grpo::expected_reward(&uniform, &d, &scores).unwrap();
        let after = crate::grpo::expected_reward(&policy, &d, &scores).unwrap();
        assert!(after > before, "{before} -> {after}");
    }
}
