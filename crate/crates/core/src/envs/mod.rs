//! Desk-scale goal-reaching environments.
//!
//! Every environment is deterministic given its RNG: the start and goal
//! states are drawn at reset, dynamics are a pure function of `(state,
//! action)` and rendering is a pure function of state. Episodes never
//! terminate before the horizon.

mod grid;
mod pixel;
mod point;
mod reacher;

pub use grid::{GridGoalWorld, GridMove};
pub use pixel::PixelReach;
pub use point::PointReach;
pub use reacher::TwoLinkReacher;

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{l2_distance, Action, GroundTruthState, Observation, RewardConstants};
use crate::Rng;

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub epsilon: f64,
    /// Physical displacement per unit action.
    pub action_scale: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::Config(format!("{}: dimensions must be positive", self.name)));
        }
        if self.horizon < 2 {
            return Err(Error::Config(format!("{}: horizon must be at least 2", self.name)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("{}: epsilon must be positive", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub ground_truth: GroundTruthState,
    pub step_count: usize,
}

/// A goal drawn at reset. `goal_obs` is always `render(goal_state)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSample {
    pub goal_obs: Observation,
    pub goal_state: GroundTruthState,
}

pub trait GoalEnv: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Draws a start state.
    fn sample_state(&self, rng: &mut Rng) -> GroundTruthState;

    /// Draws a goal state. Defaults to the start distribution.
    fn sample_goal_state(&self, rng: &mut Rng) -> GroundTruthState {
        self.sample_state(rng)
    }

    /// Deterministic dynamics. `action` is already clipped to `[-1, 1]`.
    fn transition(&self, state: &GroundTruthState, action: &Action) -> GroundTruthState;

    fn render(&self, state: &GroundTruthState) -> Observation;

    /// The part of the state that goals are judged on.
    fn achieved_goal(&self, state: &GroundTruthState) -> Vec<f64>;

    /// L2 distance between achieved-goal projections.
    fn goal_distance(&self, state: &GroundTruthState, goal_state: &GroundTruthState) -> f64 {
        l2_distance(&self.achieved_goal(state), &self.achieved_goal(goal_state))
            .expect("achieved-goal projections share a dimension")
    }

    /// Ground-truth success: distance within ε, inclusive.
    fn true_success(&self, state: &GroundTruthState, goal_state: &GroundTruthState) -> bool {
        self.goal_distance(state, goal_state) <= self.spec().epsilon
    }

    /// `R± = ±1` with `γ = (T - 1) / T`.
    fn reward_constants(&self) -> RewardConstants {
        let spec = self.spec();
        RewardConstants::for_horizon(spec.horizon, spec.epsilon)
            .expect("environment specs are validated at construction")
    }

    fn reset(&self, rng: &mut Rng) -> (EnvState, Observation, GoalSample) {
        let start = self.sample_state(rng);
        let goal_state = self.sample_goal_state(rng);
        let obs = self.render(&start);
        let goal = GoalSample { goal_obs: self.render(&goal_state), goal_state };
        (EnvState { ground_truth: start, step_count: 0 }, obs, goal)
    }

    fn step(&self, state: &EnvState, action: &Action) -> Result<(EnvState, Observation)> {
        let spec = self.spec();
        if state.step_count >= spec.horizon {
            return Err(Error::EpisodeExhausted { step: state.step_count, horizon: spec.horizon });
        }
        if action.len() != spec.action_dim {
            return Err(Error::Dimension { expected: spec.action_dim, actual: action.len() });
        }
        let action = Action::clipped(action.as_slice().to_vec())?;
        let next = self.transition(&state.ground_truth, &action);
        let obs = self.render(&next);
        Ok((EnvState { ground_truth: next, step_count: state.step_count + 1 }, obs))
    }
}

/// Environment roster, selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    PointReach2D,
    PointReach3D,
    TwoLinkReacher,
    PixelReach { side: usize },
    GridGoalWorld { side: usize },
}

impl FromStr for EnvKind {
    type Err = Error;

    /// Accepts `point_reach_2d`, `point_reach_3d`, `two_link_reacher`,
    /// `pixel_reach[:k]` and `grid_goal_world[:n]`, case-insensitively and
    /// ignoring `-`/`_`.
    fn from_str(s: &str) -> Result<Self> {
        let lowered = s.trim().to_ascii_lowercase();
        let (name, arg) = match lowered.split_once(':') {
            Some((n, a)) => (n.to_string(), Some(a.to_string())),
            None => (lowered, None),
        };
        let key: String = name.chars().filter(|c| *c != '_' && *c != '-').collect();
        let side = |default: usize| -> Result<usize> {
            match &arg {
                None => Ok(default),
                Some(a) => a
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n >= 2)
                    .ok_or_else(|| Error::Config(format!("bad size `{a}` in env name `{s}`"))),
            }
        };
        let kind = match key.as_str() {
            "pointreach2d" => EnvKind::PointReach2D,
            "pointreach3d" => EnvKind::PointReach3D,
            "twolinkreacher" => EnvKind::TwoLinkReacher,
            "pixelreach" => EnvKind::PixelReach { side: side(10)? },
            "gridgoalworld" => EnvKind::GridGoalWorld { side: side(8)? },
            _ => return Err(Error::Config(format!("unknown environment `{s}`"))),
        };
        if arg.is_some() && !matches!(kind, EnvKind::PixelReach { .. } | EnvKind::GridGoalWorld { .. })
        {
            return Err(Error::Config(format!("environment `{s}` takes no size argument")));
        }
        Ok(kind)
    }
}

impl EnvKind {
    pub fn build(self) -> Box<dyn GoalEnv> {
        match self {
            EnvKind::PointReach2D => Box::new(PointReach::reach_2d()),
            EnvKind::PointReach3D => Box::new(PointReach::reach_3d()),
            EnvKind::TwoLinkReacher => Box::new(TwoLinkReacher::default()),
            EnvKind::PixelReach { side } => Box::new(PixelReach::new(side)),
            EnvKind::GridGoalWorld { side } => Box::new(GridGoalWorld::new(side)),
        }
    }

    /// Whether observations are images.
    pub fn is_pixel(self) -> bool {
        matches!(self, EnvKind::PixelReach { .. })
    }
}

/// Builds an environment from its name.
pub fn make_env(name: &str) -> Result<Box<dyn GoalEnv>> {
    Ok(name.parse::<EnvKind>()?.build())
}

pub(crate) fn uniform_box(rng: &mut Rng, dim: usize, low: f64, high: f64) -> Vec<f64> {
    use rand::Rng as _;
    (0..dim).map(|_| rng.random_range(low..high)).collect()
}
