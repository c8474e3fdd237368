use super::{uniform_box, EnvSpec, GoalEnv};
use crate::types::{Action, GroundTruthState, Observation};
use crate::Rng;

/// A point in the unit box moved by bounded displacements. The observation
/// is the position itself.
#[derive(Clone, Debug)]
pub struct PointReach {
    spec: EnvSpec,
}

impl PointReach {
    pub fn new(name: &str, dim: usize, horizon: usize, epsilon: f64, action_scale: f64) -> Self {
        let spec = EnvSpec {
            name: name.to_string(),
            obs_dim: dim,
            state_dim: dim,
            action_dim: dim,
            horizon,
            epsilon,
            action_scale,
        };
        spec.validate().expect("valid point-reach spec");
        Self { spec }
    }

    pub fn reach_2d() -> Self {
        Self::new("point_reach_2d", 2, 50, 0.01, 0.05)
    }

    pub fn reach_3d() -> Self {
        Self::new("point_reach_3d", 3, 50, 0.05, 0.05)
    }
}

/// `clip(position + scale * action, [0, 1])`, shared with the pixel variant.
pub(crate) fn move_point(position: &[f64], action: &Action, scale: f64) -> Vec<f64> {
    position
        .iter()
        .zip(action.as_slice())
        .map(|(p, a)| (p + scale * a).clamp(0.0, 1.0))
        .collect()
}

impl GoalEnv for PointReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_state(&self, rng: &mut Rng) -> GroundTruthState {
        GroundTruthState::from_finite(uniform_box(rng, self.spec.state_dim, 0.0, 1.0))
    }

    fn transition(&self, state: &GroundTruthState, action: &Action) -> GroundTruthState {
        GroundTruthState::from_finite(move_point(state.as_slice(), action, self.spec.action_scale))
    }

    fn render(&self, state: &GroundTruthState) -> Observation {
        Observation::from_finite(state.as_slice().to_vec())
    }

    fn achieved_goal(&self, state: &GroundTruthState) -> Vec<f64> {
        state.as_slice().to_vec()
    }
}
