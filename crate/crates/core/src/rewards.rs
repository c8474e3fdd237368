//! Reward functions and reward-quality diagnostics.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::GoalEnv;
use crate::error::{Error, Result};
use crate::types::{obs_equal, GroundTruthState, Observation, RewardConstants};
use crate::Rng;

/// ε-ball reward on ground-truth states: `R+` when the achieved goal is
/// within ε of the goal (inclusive), else `R-`.
pub fn true_reward(
    next_state: &GroundTruthState,
    goal_state: &GroundTruthState,
    env: &dyn GoalEnv,
    c: &RewardConstants,
) -> f64 {
    if env.true_success(next_state, goal_state) {
        c.r_plus
    } else {
        c.r_minus
    }
}

/// `R+` only when the next observation is bit-identical to the goal.
pub fn indicator_reward(
    next_obs: &Observation,
    goal_obs: &Observation,
    c: &RewardConstants,
) -> Result<f64> {
    Ok(if obs_equal(next_obs, goal_obs)? { c.r_plus } else { c.r_minus })
}

/// Per-evaluation flip probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipConfig {
    /// Probability that a true negative is reported as `R+`.
    pub p_fp: f64,
    /// Probability that a true positive is reported as `R-`.
    pub p_fn: f64,
}

impl FlipConfig {
    pub fn false_positives(rate: f64) -> Self {
        Self { p_fp: rate, p_fn: 0.0 }
    }

    pub fn false_negatives(rate: f64) -> Self {
        Self { p_fp: 0.0, p_fn: rate }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_fp) || !ok(self.p_fn) {
            return Err(Error::Config(format!("flip rates must lie in [0, 1]: {self:?}")));
        }
        if self.p_fp > 0.0 && self.p_fn > 0.0 {
            return Err(Error::Config("at most one flip rate may be nonzero".into()));
        }
        Ok(())
    }
}

/// Flips `r` according to `cfg`. Exactly one uniform draw per call, whatever
/// the outcome, so noisy and noise-free runs consume the RNG identically.
pub fn flip_reward(
    r: f64,
    truth_is_positive: bool,
    cfg: &FlipConfig,
    c: &RewardConstants,
    rng: &mut Rng,
) -> f64 {
    let draw: f64 = rng.random();
    if truth_is_positive && draw < cfg.p_fn {
        c.r_minus
    } else if !truth_is_positive && draw < cfg.p_fp {
        c.r_plus
    } else {
        r
    }
}

/// Inputs available to a reward function for one (possibly relabeled)
/// transition. Ground truth is reachable only through [`RewardQuery::ground_truth`].
#[derive(Clone, Copy, Debug)]
pub struct RewardQuery<'a> {
    pub next_obs: &'a Observation,
    pub goal_obs: &'a Observation,
    next_state: &'a GroundTruthState,
    goal_state: &'a GroundTruthState,
}

impl<'a> RewardQuery<'a> {
    pub fn new(
        next_obs: &'a Observation,
        goal_obs: &'a Observation,
        next_state: &'a GroundTruthState,
        goal_state: &'a GroundTruthState,
    ) -> Self {
        Self { next_obs, goal_obs, next_state, goal_state }
    }

    /// `(next_state, goal_state)`. Oracle rewards and diagnostics only.
    pub fn ground_truth(&self) -> (&'a GroundTruthState, &'a GroundTruthState) {
        (self.next_state, self.goal_state)
    }
}

/// A reward function used while relabeling replayed transitions.
pub trait RewardFn {
    fn reward(&mut self, query: &RewardQuery<'_>) -> Result<f64>;
}

/// Exact observation match. Never looks at ground truth.
#[derive(Clone, Copy, Debug)]
pub struct IndicatorReward {
    pub constants: RewardConstants,
}

impl RewardFn for IndicatorReward {
    fn reward(&mut self, query: &RewardQuery<'_>) -> Result<f64> {
        indicator_reward(query.next_obs, query.goal_obs, &self.constants)
    }
}

/// Ground-truth ε-ball reward.
#[derive(Clone, Copy)]
pub struct OracleReward<'e> {
    pub env: &'e dyn GoalEnv,
    pub constants: RewardConstants,
}

impl RewardFn for OracleReward<'_> {
    fn reward(&mut self, query: &RewardQuery<'_>) -> Result<f64> {
        let (next_state, goal_state) = query.ground_truth();
        Ok(true_reward(next_state, goal_state, self.env, &self.constants))
    }
}

/// Ground-truth reward passed through [`flip_reward`] with its own RNG.
pub struct FlippedOracleReward<'e> {
    pub oracle: OracleReward<'e>,
    pub flips: FlipConfig,
    pub rng: Rng,
}

impl RewardFn for FlippedOracleReward<'_> {
    fn reward(&mut self, query: &RewardQuery<'_>) -> Result<f64> {
        let r = self.oracle.reward(query)?;
        let c = self.oracle.constants;
        Ok(flip_reward(r, r == c.r_plus, &self.flips, &c, &mut self.rng))
    }
}

/// One assigned reward with the ground truth it should be judged against.
#[derive(Clone, Copy, Debug)]
pub struct DiagnosticEntry<'a> {
    pub reward: f64,
    pub next_state: Option<&'a GroundTruthState>,
    pub goal_state: Option<&'a GroundTruthState>,
}

/// Agreement between assigned rewards and the ground-truth reward.
/// Rates are fractions of the whole batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardDiagnostics {
    pub fn_rate: f64,
    pub fp_rate: f64,
    pub accuracy: f64,
    pub positive_fraction: f64,
}

pub fn diagnose_batch(
    entries: &[DiagnosticEntry<'_>],
    env: &dyn GoalEnv,
    c: &RewardConstants,
) -> Result<RewardDiagnostics> {
    if entries.is_empty() {
        return Err(Error::DiagnosticsUnavailable);
    }
    let (mut false_neg, mut false_pos, mut agree, mut positive) = (0usize, 0usize, 0usize, 0usize);
    for e in entries {
        let (Some(next), Some(goal)) = (e.next_state, e.goal_state) else {
            return Err(Error::DiagnosticsUnavailable);
        };
        let assigned_pos = e.reward == c.r_plus;
        let truth_pos = env.true_success(next, goal);
        positive += assigned_pos as usize;
        match (assigned_pos, truth_pos) {
            (false, true) => false_neg += 1,
            (true, false) => false_pos += 1,
            _ => agree += 1,
        }
    }
    let n = entries.len() as f64;
    let d = RewardDiagnostics {
        fn_rate: false_neg as f64 / n,
        fp_rate: false_pos as f64 / n,
        accuracy: agree as f64 / n,
        positive_fraction: positive as f64 / n,
    };
    debug_assert!((d.accuracy - (1.0 - d.fn_rate - d.fp_rate)).abs() < 1e-12);
    Ok(d)
}
