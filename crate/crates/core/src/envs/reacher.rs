use std::f64::consts::PI;

use super::{uniform_box, EnvSpec, GoalEnv};
use crate::types::{Action, GroundTruthState, Observation};
use crate::Rng;

/// Planar two-link arm with kinematic joint control.
///
/// State is the joint angles `(θ1, θ2)`, wrapped to `[-π, π)`. Observations
/// are `(cos θ1, sin θ1, cos θ2, sin θ2, x, y)` with the fingertip from
/// forward kinematics; goals are judged on the fingertip.
#[derive(Clone, Debug)]
pub struct TwoLinkReacher {
    spec: EnvSpec,
    link_lengths: (f64, f64),
}

impl Default for TwoLinkReacher {
    fn default() -> Self {
        Self::new((0.1, 0.1), 0.1)
    }
}

pub(crate) fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl TwoLinkReacher {
    pub fn new(link_lengths: (f64, f64), action_scale: f64) -> Self {
        let spec = EnvSpec {
            name: "two_link_reacher".to_string(),
            obs_dim: 6,
            state_dim: 2,
            action_dim: 2,
            horizon: 50,
            epsilon: 0.02,
            action_scale,
        };
        spec.validate().expect("valid reacher spec");
        Self { spec, link_lengths }
    }

    pub fn fingertip(&self, angles: &[f64]) -> (f64, f64) {
        let (l1, l2) = self.link_lengths;
        let (t1, t2) = (angles[0], angles[1]);
        (l1 * t1.cos() + l2 * (t1 + t2).cos(), l1 * t1.sin() + l2 * (t1 + t2).sin())
    }
}

impl GoalEnv for TwoLinkReacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_state(&self, rng: &mut Rng) -> GroundTruthState {
        GroundTruthState::from_finite(uniform_box(rng, 2, -PI, PI))
    }

    fn transition(&self, state: &GroundTruthState, action: &Action) -> GroundTruthState {
        let scale = self.spec.action_scale;
        GroundTruthState::from_finite(
            state
                .as_slice()
                .iter()
                .zip(action.as_slice())
                .map(|(t, a)| wrap_angle(t + scale * a))
                .collect(),
        )
    }

    fn render(&self, state: &GroundTruthState) -> Observation {
        let s = state.as_slice();
        let (x, y) = self.fingertip(s);
        Observation::from_finite(vec![s[0].cos(), s[0].sin(), s[1].cos(), s[1].sin(), x, y])
    }

    fn achieved_goal(&self, state: &GroundTruthState) -> Vec<f64> {
        let (x, y) = self.fingertip(state.as_slice());
        vec![x, y]
    }
}
