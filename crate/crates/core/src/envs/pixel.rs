use super::point::move_point;
use super::{uniform_box, EnvSpec, GoalEnv};
use crate::types::{Action, GroundTruthState, Observation};
use crate::Rng;

/// PointReach2D dynamics observed through a `k × k` grayscale image.
///
/// Each pixel holds a Gaussian blob (σ = 1 cell) centred on the point's
/// grid position, quantized to one of 256 levels `q / 255`. Rows index `y`,
/// columns index `x`, flattened row-major.
#[derive(Clone, Debug)]
pub struct PixelReach {
    spec: EnvSpec,
    side: usize,
    sigma_px: f64,
}

impl PixelReach {
    pub fn new(side: usize) -> Self {
        assert!(side >= 2, "pixel grid needs at least 2x2 cells");
        let spec = EnvSpec {
            name: format!("pixel_reach:{side}"),
            obs_dim: side * side,
            state_dim: 2,
            action_dim: 2,
            horizon: 25,
            // a tenth of the unit workspace
            epsilon: 0.1,
            action_scale: 0.05,
        };
        spec.validate().expect("valid pixel-reach spec");
        Self { spec, side, sigma_px: 1.0 }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Continuous grid coordinate of a workspace coordinate; cell `i` has its
    /// centre at `(i + 0.5) / k`.
    fn to_grid(&self, p: f64) -> f64 {
        p * self.side as f64 - 0.5
    }
}

pub(crate) fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

impl GoalEnv for PixelReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_state(&self, rng: &mut Rng) -> GroundTruthState {
        GroundTruthState::from_finite(uniform_box(rng, 2, 0.0, 1.0))
    }

    fn transition(&self, state: &GroundTruthState, action: &Action) -> GroundTruthState {
        GroundTruthState::from_finite(move_point(state.as_slice(), action, self.spec.action_scale))
    }

    fn render(&self, state: &GroundTruthState) -> Observation {
        let s = state.as_slice();
        let (gx, gy) = (self.to_grid(s[0]), self.to_grid(s[1]));
        let denom = 2.0 * self.sigma_px * self.sigma_px;
        let mut pixels = Vec::with_capacity(self.side * self.side);
        for row in 0..self.side {
            let dy = row as f64 - gy;
            for col in 0..self.side {
                let dx = col as f64 - gx;
                pixels.push(quantize((-(dx * dx + dy * dy) / denom).exp()));
            }
        }
        Observation::from_finite(pixels)
    }

    fn achieved_goal(&self, state: &GroundTruthState) -> Vec<f64> {
        state.as_slice().to_vec()
    }
}
