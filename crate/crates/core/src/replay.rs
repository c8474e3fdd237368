//! Episode replay with hindsight goal relabeling and Q-threshold filtering.
//!
//! Episodes of horizon `T` are stored whole: observations `o_0 … o_T`,
//! actions `a_0 … a_{T-1}` and the shared goal. A transition `t` is
//! `(o_t, a_t, o_{t+1})`; "future" indices below are observation indices.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::{DiagnosticEntry, RewardFn, RewardQuery};
use crate::types::{
    obs_equal, Action, GroundTruthState, Observation, RewardConstants, Transition, TransitionTruth,
};
use crate::Rng;

/// Branch probabilities for relabeling plus buffer and batch sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelConfig {
    /// Goal replaced by the achieved next observation (`p1`).
    pub p_achieved: f64,
    /// Goal replaced by an observation at least two steps ahead (`p2`).
    pub p_future: f64,
    /// Original goal kept (`p3`).
    pub p_original: f64,
    /// Buffer capacity in transitions.
    pub capacity: usize,
    pub batch_size: usize,
}

impl RelabelConfig {
    /// Reward balancing: `(0.45, 0.45, 0.1)`.
    pub fn balanced(capacity: usize, batch_size: usize) -> Self {
        Self { p_achieved: 0.45, p_future: 0.45, p_original: 0.1, capacity, batch_size }
    }

    /// Plain hindsight relabeling: future goal with probability 0.9, else the
    /// original goal.
    pub fn future_only(capacity: usize, batch_size: usize) -> Self {
        Self { p_achieved: 0.0, p_future: 0.9, p_original: 0.1, capacity, batch_size }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_achieved, self.p_future, self.p_original];
        if ps.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config(format!("relabel probabilities must be >= 0: {ps:?}")));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("relabel probabilities must sum to 1: {ps:?}")));
        }
        if self.batch_size == 0 || self.capacity < self.batch_size {
            return Err(Error::Config(format!(
                "need capacity >= batch_size >= 1, got {} and {}",
                self.capacity, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Midpoint of the admissible filtering interval
/// `(R- + γ R+ / (1 - γ), R+ / (1 - γ))`.
pub fn derive_q0(c: &RewardConstants) -> Result<f64> {
    if !(c.gamma > 0.0 && c.gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", c.gamma)));
    }
    Ok(0.5 * (c.q_negative_max() + c.q_max()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub q0: f64,
    pub enabled: bool,
}

impl FilterConfig {
    pub fn from_constants(c: &RewardConstants, enabled: bool) -> Result<Self> {
        Ok(Self { q0: derive_q0(c)?, enabled })
    }

    pub fn disabled() -> Self {
        Self { q0: f64::INFINITY, enabled: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelabelBranch {
    Achieved,
    Future,
    Original,
}

/// A replayed transition with its (possibly replaced) goal and reward.
#[derive(Clone, Debug)]
pub struct RelabeledSample {
    pub obs: Observation,
    pub action: Action,
    pub next_obs: Observation,
    pub goal_obs: Observation,
    pub reward: f64,
    pub branch: RelabelBranch,
    /// A future draw at `t = T - 1` fell back to the achieved branch.
    pub fell_back: bool,
    pub t: usize,
    next_state: GroundTruthState,
    goal_state: GroundTruthState,
}

impl RelabeledSample {
    /// `(next_state, relabeled goal_state)`, for diagnostics only.
    pub fn ground_truth(&self) -> (&GroundTruthState, &GroundTruthState) {
        (&self.next_state, &self.goal_state)
    }

    pub fn diagnostic_entry(&self) -> DiagnosticEntry<'_> {
        DiagnosticEntry {
            reward: self.reward,
            next_state: Some(&self.next_state),
            goal_state: Some(&self.goal_state),
        }
    }
}

#[derive(Clone, Debug)]
struct Episode {
    obs: Vec<Observation>,
    states: Vec<GroundTruthState>,
    actions: Vec<Action>,
    goal_obs: Observation,
    goal_state: GroundTruthState,
}

/// FIFO store of complete episodes, bounded in transitions.
///
/// Single writer. Sampling takes `&self`, so concurrent readers are fine as
/// long as nobody is storing.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    horizon: usize,
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(horizon: usize, capacity: usize) -> Result<Self> {
        if horizon == 0 || capacity < horizon {
            return Err(Error::Config(format!(
                "buffer capacity {capacity} cannot hold one episode of horizon {horizon}"
            )));
        }
        Ok(Self { horizon, capacity, episodes: VecDeque::new() })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.episodes.len() * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Appends a complete episode and evicts the oldest ones beyond capacity.
    pub fn store_episode(&mut self, episode: &[Transition]) -> Result<()> {
        let t_len = self.horizon;
        if episode.len() != t_len {
            return Err(Error::RaggedEpisode(format!(
                "expected {t_len} transitions, got {}",
                episode.len()
            )));
        }
        let first = &episode[0];
        let goal_obs = first.goal_obs.clone();
        let goal_state = first.ground_truth().goal_state.clone();
        let mut obs = Vec::with_capacity(t_len + 1);
        let mut states = Vec::with_capacity(t_len + 1);
        let mut actions = Vec::with_capacity(t_len);
        obs.push(first.obs.clone());
        states.push(first.ground_truth().state.clone());
        for (i, tr) in episode.iter().enumerate() {
            let truth = tr.ground_truth();
            if tr.t != i {
                return Err(Error::RaggedEpisode(format!("transition {i} has step index {}", tr.t)));
            }
            if !obs_equal(&tr.goal_obs, &goal_obs)? || truth.goal_state != goal_state {
                return Err(Error::RaggedEpisode(format!("transition {i} changes the goal")));
            }
            if !obs_equal(&tr.obs, &obs[i])? || truth.state != states[i] {
                return Err(Error::RaggedEpisode(format!(
                    "transition {i} does not continue from the previous step"
                )));
            }
            obs.push(tr.next_obs.clone());
            states.push(truth.next_state.clone());
            actions.push(tr.action.clone());
        }
        self.episodes.push_back(Episode { obs, states, actions, goal_obs, goal_state });
        while self.len() > self.capacity {
            self.episodes.pop_front();
        }
        Ok(())
    }

    /// Reconstructs transition `t` of the `episode`-th stored episode
    /// (0 = oldest).
    pub fn transition(&self, episode: usize, t: usize) -> Option<Transition> {
        let ep = self.episodes.get(episode)?;
        if t >= self.horizon {
            return None;
        }
        Some(Transition::new(
            ep.obs[t].clone(),
            ep.actions[t].clone(),
            ep.obs[t + 1].clone(),
            ep.goal_obs.clone(),
            t,
            TransitionTruth {
                state: ep.states[t].clone(),
                next_state: ep.states[t + 1].clone(),
                goal_state: ep.goal_state.clone(),
            },
        ))
    }

    /// Every stored observation, oldest first.
    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.episodes.iter().flat_map(|ep| ep.obs.iter())
    }

    /// Draws `cfg.batch_size` transitions uniformly and relabels each one.
    pub fn sample_relabeled(
        &self,
        cfg: &RelabelConfig,
        reward_fn: &mut dyn RewardFn,
        rng: &mut Rng,
    ) -> Result<Vec<RelabeledSample>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        (0..cfg.batch_size)
            .map(|_| {
                let idx = rng.random_range(0..self.len());
                self.relabel(idx / self.horizon, idx % self.horizon, cfg, reward_fn, rng)
            })
            .collect()
    }

    fn relabel(
        &self,
        episode: usize,
        t: usize,
        cfg: &RelabelConfig,
        reward_fn: &mut dyn RewardFn,
        rng: &mut Rng,
    ) -> Result<RelabeledSample> {
        let ep = &self.episodes[episode];
        let u: f64 = rng.random();
        let mut branch = if u < cfg.p_achieved {
            RelabelBranch::Achieved
        } else if u < cfg.p_achieved + cfg.p_future {
            RelabelBranch::Future
        } else {
            RelabelBranch::Original
        };
        // {t+2, …, T} is empty on the last step
        let mut fell_back = false;
        if branch == RelabelBranch::Future && t + 2 > self.horizon {
            branch = RelabelBranch::Achieved;
            fell_back = true;
        }
        let (goal_obs, goal_state) = match branch {
            RelabelBranch::Achieved => (&ep.obs[t + 1], &ep.states[t + 1]),
            RelabelBranch::Future => {
                let future = rng.random_range(t + 2..=self.horizon);
                (&ep.obs[future], &ep.states[future])
            }
            RelabelBranch::Original => (&ep.goal_obs, &ep.goal_state),
        };
        let next_obs = &ep.obs[t + 1];
        let next_state = &ep.states[t + 1];
        let reward =
            reward_fn.reward(&RewardQuery::new(next_obs, goal_obs, next_state, goal_state))?;
        Ok(RelabeledSample {
            obs: ep.obs[t].clone(),
            action: ep.actions[t].clone(),
            next_obs: next_obs.clone(),
            goal_obs: goal_obs.clone(),
            reward,
            branch,
            fell_back,
            t,
            next_state: next_state.clone(),
            goal_state: goal_state.clone(),
        })
    }
}

/// Anything that can score `Q(obs, action, goal)` for a batch.
pub trait QEvaluator {
    fn q_values(&self, batch: &[RelabeledSample]) -> Vec<f64>;
}

/// Adapts a per-sample closure into a [`QEvaluator`].
pub struct FnCritic<F>(pub F);

impl<F> QEvaluator for FnCritic<F>
where
    F: Fn(&Observation, &Action, &Observation) -> f64,
{
    fn q_values(&self, batch: &[RelabeledSample]) -> Vec<f64> {
        batch.iter().map(|s| (self.0)(&s.obs, &s.action, &s.goal_obs)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FilterOutcome {
    pub kept: Vec<RelabeledSample>,
    pub removed: usize,
}

impl FilterOutcome {
    pub fn filtered_fraction(&self) -> f64 {
        let total = self.kept.len() + self.removed;
        if total == 0 {
            0.0
        } else {
            self.removed as f64 / total as f64
        }
    }
}

/// Drops samples whose reward is `R-` but whose Q exceeds `q0`: likely false
/// negatives. Positive samples are never dropped; order is preserved.
pub fn filter_batch(
    batch: Vec<RelabeledSample>,
    critic: &dyn QEvaluator,
    cfg: &FilterConfig,
    c: &RewardConstants,
) -> FilterOutcome {
    if !cfg.enabled || batch.is_empty() {
        return FilterOutcome { kept: batch, removed: 0 };
    }
    let q = critic.q_values(&batch);
    let before = batch.len();
    let kept: Vec<_> = batch
        .into_iter()
        .zip(q)
        .filter(|(s, q)| !(s.reward == c.r_minus && *q > cfg.q0))
        .map(|(s, _)| s)
        .collect();
    FilterOutcome { removed: before - kept.len(), kept }
}
