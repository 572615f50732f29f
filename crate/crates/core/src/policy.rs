//! Tabular categorical policy over per-state candidate responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::OptimError;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// SplitMix64 finalizer, used to derive per-(iteration, state) seeds.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-state action logits plus the candidate response text behind each action.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    logits: Vec<Vec<f64>>,
    action_table: Vec<Vec<String>>,
}

/// Gradient with the same shape as [`ToyPolicy`]'s logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrad(pub Vec<Vec<f64>>);

impl LogitGrad {
    pub fn zeros_like(policy: &ToyPolicy) -> Self {
        LogitGrad(policy.logits.iter().map(|row| vec![0.0; row.len()]).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}

impl ToyPolicy {
    pub fn new(logits: Vec<Vec<f64>>, action_table: Vec<Vec<String>>) -> Result<Self, OptimError> {
        if logits.len() != action_table.len() {
            return Err(OptimError::ShapeMismatch(logits.len().min(action_table.len())));
        }
        for (s, (row, actions)) in logits.iter().zip(&action_table).enumerate() {
            if actions.is_empty() {
                return Err(OptimError::EmptyActions(s));
            }
            if row.len() != actions.len() {
                return Err(OptimError::ShapeMismatch(s));
            }
        }
        Ok(ToyPolicy { logits, action_table })
    }

    /// All-zero logits, i.e. uniform over each state's candidates.
    pub fn uniform(action_table: Vec<Vec<String>>) -> Result<Self, OptimError> {
        let logits = action_table.iter().map(|a| vec![0.0; a.len()]).collect();
        Self::new(logits, action_table)
    }

    pub fn num_states(&self) -> usize {
        self.logits.len()
    }

    pub fn num_actions(&self, state: usize) -> Result<usize, OptimError> {
        Ok(self.row(state)?.len())
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn action_table(&self) -> &[Vec<String>] {
        &self.action_table
    }

    pub fn action_text(&self, state: usize, action: usize) -> Result<&str, OptimError> {
        self.action_table
            .get(state)
            .ok_or(OptimError::InvalidState { state, num_states: self.num_states() })?
            .get(action)
            .map(String::as_str)
            .ok_or(OptimError::InvalidAction { state, action })
    }

    fn row(&self, state: usize) -> Result<&[f64], OptimError> {
        self.logits
            .get(state)
            .map(Vec::as_slice)
            .ok_or(OptimError::InvalidState { state, num_states: self.num_states() })
    }

    pub fn probs(&self, state: usize) -> Result<Vec<f64>, OptimError> {
        Ok(softmax(self.row(state)?))
    }

    pub fn log_probs(&self, state: usize) -> Result<Vec<f64>, OptimError> {
        Ok(log_softmax(self.row(state)?))
    }

    pub fn prob(&self, state: usize, action: usize) -> Result<f64, OptimError> {
        self.probs(state)?
            .get(action)
            .copied()
            .ok_or(OptimError::InvalidAction { state, action })
    }

    pub fn same_shape(&self, other: &ToyPolicy) -> Result<(), OptimError> {
        if self.num_states() != other.num_states() {
            return Err(OptimError::ShapeMismatch(self.num_states().min(other.num_states())));
        }
        for (s, (a, b)) in self.logits.iter().zip(&other.logits).enumerate() {
            if a.len() != b.len() {
                return Err(OptimError::ShapeMismatch(s));
            }
        }
        Ok(())
    }

    /// `logits += step * grad`.
    pub fn ascend(&mut self, grad: &LogitGrad, step: f64) {
        for (row, g) in self.logits.iter_mut().zip(&grad.0) {
            for (z, d) in row.iter_mut().zip(g) {
                *z += step * d;
            }
        }
    }

    pub fn set_logit(&mut self, state: usize, action: usize, value: f64) {
        self.logits[state][action] = value;
    }

    /// Largest total-variation distance between per-state distributions.
    pub fn max_total_variation(&self, other: &ToyPolicy) -> Result<f64, OptimError> {
        self.same_shape(other)?;
        let mut worst = 0.0_f64;
        for s in 0..self.num_states() {
            let tv: f64 = self
                .probs(s)?
                .iter()
                .zip(other.probs(s)?)
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                / 2.0;
            worst = worst.max(tv);
        }
        Ok(worst)
    }
}

/// Draws `group_size` independent actions for `state` by inverse-CDF sampling
/// from a ChaCha8 stream seeded with `rng_seed`.
pub fn sample_group(
    policy: &ToyPolicy,
    state: usize,
    group_size: usize,
    rng_seed: u64,
) -> Result<Vec<usize>, OptimError> {
    if group_size < 2 {
        return Err(OptimError::GroupSize(group_size));
    }
    let probs = policy.probs(state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let last = probs.len() - 1;
    Ok((0..group_size)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (a, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return a;
                }
            }
            last
        })
        .collect())
}
