//! Group-relative policy optimization on a [`ToyPolicy`].
//!
//! Per iteration: sample a group of G candidates for every state from the
//! current policy, score them, standardize rewards within each group, then
//! take one gradient-ascent step on
//!
//! ```text
//! J = mean_groups[ (1/G) * sum_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) ] - beta * KL(pi || pi_ref)
//! ```
//!
//! KL is computed exactly over each state's finite action table.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{ConfigError, OptimError};
use crate::policy::{mix_seed, sample_group, LogitGrad, ToyPolicy};
use crate::reward::GroundTruth;

pub const DEFAULT_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub kl_coeff: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub std_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            kl_coeff: 0.04,
            clip: 0.2,
            learning_rate: 4.0,
            epochs: 200,
            seed: 0,
            std_floor: DEFAULT_STD_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Train(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return bad("kl_coeff must be finite and >= 0");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must be in (0, 1)");
        }
        // zero is accepted so a run can be replayed with a frozen policy
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.std_floor >= 0.0 && self.std_floor.is_finite()) {
            return bad("std_floor must be finite and >= 0");
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n).
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `A_i = (R_i - mean) / std` with population std; all zeros when the group's
/// std is below `std_floor`.
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, OptimError> {
    if rewards.len() < 2 {
        return Err(OptimError::GroupSize(rewards.len()));
    }
    let m = mean(rewards);
    let sd = population_std(rewards);
    if sd < std_floor || sd == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - m) / sd).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub state: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(
        state: usize,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        std_floor: f64,
    ) -> Result<Self, OptimError> {
        if actions.len() != rewards.len() {
            return Err(OptimError::GroupSize(actions.len().min(rewards.len())));
        }
        let advantages = compute_advantages(&rewards, std_floor)?;
        Ok(RolloutGroup { state, actions, rewards, advantages })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `pi(action|state) / pi_ref(action|state)`.
pub fn importance_ratio(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    state: usize,
    action: usize,
) -> Result<f64, OptimError> {
    policy.same_shape(reference)?;
    let q = reference.prob(state, action)?;
    if q == 0.0 {
        return Err(OptimError::ZeroReference { state, action });
    }
    Ok(policy.prob(state, action)? / q)
}

/// `min(rho * A, clamp(rho, 1 - clip, 1 + clip) * A)`.
pub fn clipped_term(rho: f64, advantage: f64, clip: f64) -> f64 {
    let clamped = rho.clamp(1.0 - clip, 1.0 + clip);
    (rho * advantage).min(clamped * advantage)
}

/// True when the unclipped branch attains the min, i.e. the term has a
/// nonzero derivative in rho. Ties resolve to the unclipped branch.
fn unclipped_active(rho: f64, advantage: f64, clip: f64) -> bool {
    rho * advantage <= rho.clamp(1.0 - clip, 1.0 + clip) * advantage
}

/// KL of one state with the probabilities and both log-probability rows.
type StateKl = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

fn state_kl(policy: &ToyPolicy, reference: &ToyPolicy, state: usize) -> Result<StateKl, OptimError> {
    let lp = policy.log_probs(state)?;
    let lq = reference.log_probs(state)?;
    if lp.len() != lq.len() {
        return Err(OptimError::ShapeMismatch(state));
    }
    let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let mut kl = 0.0;
    for a in 0..p.len() {
        if p[a] > 0.0 {
            if lq[a].exp() == 0.0 {
                return Err(OptimError::ZeroReference { state, action: a });
            }
            kl += p[a] * (lp[a] - lq[a]);
        }
    }
    Ok((kl, p, lp, lq))
}

/// Exact `E_pi[log pi - log pi_ref]` averaged over `states`.
pub fn kl_penalty(policy: &ToyPolicy, reference: &ToyPolicy, states: &[usize]) -> Result<f64, OptimError> {
    policy.same_shape(reference)?;
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &s in states {
        total += state_kl(policy, reference, s)?.0;
    }
    Ok(total / states.len() as f64)
}

/// Clipped objective with the importance ratio taken against `reference`,
/// which also anchors the KL term.
pub fn objective(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    config: &TrainConfig,
) -> Result<f64, OptimError> {
    surrogate_objective(policy, reference, reference, groups, config)
}

pub fn objective_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    config: &TrainConfig,
) -> Result<LogitGrad, OptimError> {
    surrogate_gradient(policy, reference, reference, groups, config)
}

/// Clipped objective with ratios against the sampling policy `old` and the KL
/// term against `reference`.
pub fn surrogate_objective(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    config: &TrainConfig,
) -> Result<f64, OptimError> {
    if groups.is_empty() {
        return Err(OptimError::NoGroups);
    }
    policy.same_shape(old)?;
    policy.same_shape(reference)?;
    let mut clip_sum = 0.0;
    for g in groups {
        let p = policy.probs(g.state)?;
        let o = old.probs(g.state)?;
        let mut group_sum = 0.0;
        for (&a, &adv) in g.actions.iter().zip(&g.advantages) {
            let (pa, oa) = ratio_parts(&p, &o, g.state, a)?;
            group_sum += clipped_term(pa / oa, adv, config.clip);
        }
        clip_sum += group_sum / g.len() as f64;
    }
    let states: Vec<usize> = groups.iter().map(|g| g.state).collect();
    let kl = kl_penalty(policy, reference, &states)?;
    Ok(clip_sum / groups.len() as f64 - config.kl_coeff * kl)
}

fn ratio_parts(p: &[f64], o: &[f64], state: usize, action: usize) -> Result<(f64, f64), OptimError> {
    let pa = *p.get(action).ok_or(OptimError::InvalidAction { state, action })?;
    let oa = o[action];
    if oa == 0.0 {
        return Err(OptimError::ZeroReference { state, action });
    }
    Ok((pa, oa))
}

/// Analytic gradient of [`surrogate_objective`] with respect to every logit of
/// `policy`.
pub fn surrogate_gradient(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    config: &TrainConfig,
) -> Result<LogitGrad, OptimError> {
    if groups.is_empty() {
        return Err(OptimError::NoGroups);
    }
    policy.same_shape(old)?;
    policy.same_shape(reference)?;
    let mut grad = LogitGrad::zeros_like(policy);
    let n_groups = groups.len() as f64;

    // d rho_a / d z_j = rho_a (delta_aj - p_j)
    for g in groups {
        let p = policy.probs(g.state)?;
        let o = old.probs(g.state)?;
        let row = &mut grad.0[g.state];
        let scale = 1.0 / (g.len() as f64 * n_groups);
        for (&a, &adv) in g.actions.iter().zip(&g.advantages) {
            let (pa, oa) = ratio_parts(&p, &o, g.state, a)?;
            let rho = pa / oa;
            if !unclipped_active(rho, adv, config.clip) {
                continue;
            }
            let coef = scale * adv * rho;
            for (j, pj) in p.iter().enumerate() {
                row[j] -= coef * pj;
            }
            row[a] += coef;
        }
    }

    // d KL_s / d z_j = p_j (log p_j - log q_j - KL_s)
    if config.kl_coeff != 0.0 {
        let weight = config.kl_coeff / n_groups;
        for g in groups {
            let (kl, p, lp, lq) = state_kl(policy, reference, g.state)?;
            let row = &mut grad.0[g.state];
            for j in 0..p.len() {
                if p[j] > 0.0 {
                    row[j] -= weight * p[j] * (lp[j] - lq[j] - kl);
                }
            }
        }
    }
    Ok(grad)
}

/// One row of the training curve, describing the policy at the start of an
/// iteration and the batch sampled from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Exact expected total reward of the policy over the dataset.
    pub mean_reward: f64,
    pub kl: f64,
    pub objective: f64,
    /// Mean reward of the sampled groups.
    pub sampled_reward: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub curve: Vec<CurvePoint>,
    /// Expected reward of the returned policy.
    pub final_mean_reward: f64,
    /// Mean over states of the best candidate's reward.
    pub max_mean_reward: f64,
}

/// Scores every candidate of every dataset entry once.
pub fn score_table<F>(
    dataset: &[(usize, GroundTruth)],
    policy: &ToyPolicy,
    scorer: F,
) -> Result<Vec<Vec<f64>>, OptimError>
where
    F: Fn(&str, &GroundTruth) -> f64,
{
    dataset
        .iter()
        .map(|(s, gt)| {
            let n = policy.num_actions(*s)?;
            (0..n)
                .map(|a| Ok(scorer(policy.action_text(*s, a)?, gt)))
                .collect()
        })
        .collect()
}

/// Expected reward under `policy`, averaged over the dataset entries.
pub fn expected_reward(
    policy: &ToyPolicy,
    dataset: &[(usize, GroundTruth)],
    scores: &[Vec<f64>],
) -> Result<f64, OptimError> {
    let mut total = 0.0;
    for ((s, _), row) in dataset.iter().zip(scores) {
        let p = policy.probs(*s)?;
        total += p.iter().zip(row).map(|(p, r)| p * r).sum::<f64>();
    }
    Ok(total / dataset.len() as f64)
}

pub fn max_reward(scores: &[Vec<f64>]) -> f64 {
    scores
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / scores.len() as f64
}

/// Runs the optimization loop. The reference policy is the input policy,
/// frozen; each iteration takes a single step from the policy it sampled with.
pub fn run_sc_grpo<F>(
    dataset: &[(usize, GroundTruth)],
    policy: &ToyPolicy,
    scorer: F,
    config: &TrainConfig,
) -> Result<TrainOutcome, OptimError>
where
    F: Fn(&str, &GroundTruth) -> f64,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(OptimError::NoGroups);
    }
    for (s, _) in dataset {
        if policy.num_actions(*s)? < 2 {
            return Err(ConfigError::Train(format!("state {s} needs at least 2 candidates")).into());
        }
    }
    let scores = score_table(dataset, policy, scorer)?;
    let reference = policy.clone();
    let mut current = policy.clone();
    let states: Vec<usize> = dataset.iter().map(|(s, _)| *s).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for iteration in 0..config.epochs {
        let old = current.clone();
        let mut groups = Vec::with_capacity(dataset.len());
        let mut sampled = 0.0;
        for (d, (s, _)) in dataset.iter().enumerate() {
            let seed = mix_seed(config.seed, iteration as u64, d as u64);
            let actions = sample_group(&old, *s, config.group_size, seed)?;
            let rewards: Vec<f64> = actions.iter().map(|&a| scores[d][a]).collect();
            sampled += rewards.iter().sum::<f64>();
            groups.push(RolloutGroup::new(*s, actions, rewards, config.std_floor)?);
        }
        let objective = surrogate_objective(&current, &old, &reference, &groups, config)?;
        curve.push(CurvePoint {
            iteration,
            mean_reward: expected_reward(&current, dataset, &scores)?,
            kl: kl_penalty(&current, &reference, &states)?,
            objective,
            sampled_reward: sampled / (dataset.len() * config.group_size) as f64,
        });
        let grad = surrogate_gradient(&current, &old, &reference, &groups, config)?;
        current.ascend(&grad, config.learning_rate);
    }

    Ok(TrainOutcome {
        final_mean_reward: expected_reward(&current, dataset, &scores)?,
        max_mean_reward: max_reward(&scores),
        policy: current,
        curve,
    })
}

/// Writes `iteration,mean_reward,kl,objective`.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,mean_reward,kl,objective")?;
    for p in curve {
        writeln!(out, "{},{},{},{}", p.iteration, p.mean_reward, p.kl, p.objective)?;
    }
    Ok(())
}
