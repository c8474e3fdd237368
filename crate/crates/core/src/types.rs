//! Shared domain types and vector math.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        pub struct $name(Vec<f64>);

        impl $name {
            /// Wraps `values`, rejecting NaN and infinities.
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.iter().all(|v| v.is_finite()) {
                    Ok(Self(values))
                } else {
                    Err(Error::NonFinite($what))
                }
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            #[allow(dead_code)]
            pub(crate) fn from_finite(values: Vec<f64>) -> Self {
                debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite {}", $what);
                Self(values)
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

real_vector!(
    /// What the agent sees: a fixed-length vector of reals. Pixel observations
    /// are flattened quantized intensities in `[0, 1]`.
    Observation,
    "observation"
);

real_vector!(
    /// Hidden simulator state, used for metrics and the Oracle reward only.
    GroundTruthState,
    "ground-truth state"
);

real_vector!(
    /// Normalized action, each component in `[-1, 1]`.
    Action,
    "action"
);

impl Action {
    /// Builds an action, clipping every component into `[-1, 1]`.
    pub fn clipped(values: Vec<f64>) -> Result<Self> {
        Self::new(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }
}

/// Reward levels, discount and success radius for one environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConstants {
    pub r_plus: f64,
    pub r_minus: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl RewardConstants {
    /// `R+ = 1`, `R- = -1` and `γ = (T - 1) / T`.
    pub fn for_horizon(horizon: usize, epsilon: f64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::Config(format!("horizon must be at least 2, got {horizon}")));
        }
        Self::new(1.0, -1.0, (horizon as f64 - 1.0) / horizon as f64, epsilon)
    }

    pub fn new(r_plus: f64, r_minus: f64, gamma: f64, epsilon: f64) -> Result<Self> {
        let c = Self { r_plus, r_minus, gamma, epsilon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_plus.is_finite() && self.r_minus.is_finite() && self.r_plus > self.r_minus) {
            return Err(Error::Config(format!(
                "need finite R+ > R-, got R+ = {}, R- = {}",
                self.r_plus, self.r_minus
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Value of receiving `R+` forever: `R+ / (1 - γ)`.
    pub fn q_max(&self) -> f64 {
        self.r_plus / (1.0 - self.gamma)
    }

    /// Value of receiving `R-` forever: `R- / (1 - γ)`.
    pub fn q_min(&self) -> f64 {
        self.r_minus / (1.0 - self.gamma)
    }

    /// Largest optimal value of a step whose reward is `R-`:
    /// `R- + γ R+ / (1 - γ)`.
    pub fn q_negative_max(&self) -> f64 {
        self.r_minus + self.gamma * self.q_max()
    }
}

/// Ground-truth states attached to a transition. Evaluation and Oracle
/// rewards only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionTruth {
    pub state: GroundTruthState,
    pub next_state: GroundTruthState,
    pub goal_state: GroundTruthState,
}

/// One stored experience step.
///
/// The ground-truth states sit behind [`Transition::ground_truth`]; learning
/// code works on [`Transition::blind`], which has no path to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub next_obs: Observation,
    pub goal_obs: Observation,
    pub t: usize,
    truth: TransitionTruth,
}

/// Observation-only projection of a [`Transition`].
#[derive(Clone, Copy, Debug)]
pub struct BlindTransition<'a> {
    pub obs: &'a Observation,
    pub action: &'a Action,
    pub next_obs: &'a Observation,
    pub goal_obs: &'a Observation,
    pub t: usize,
}

impl Transition {
    pub fn new(
        obs: Observation,
        action: Action,
        next_obs: Observation,
        goal_obs: Observation,
        t: usize,
        truth: TransitionTruth,
    ) -> Self {
        Self { obs, action, next_obs, goal_obs, t, truth }
    }

    pub fn blind(&self) -> BlindTransition<'_> {
        BlindTransition {
            obs: &self.obs,
            action: &self.action,
            next_obs: &self.next_obs,
            goal_obs: &self.goal_obs,
            t: self.t,
        }
    }

    /// Hidden states, for metrics and the Oracle reward.
    pub fn ground_truth(&self) -> &TransitionTruth {
        &self.truth
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Dimension { expected: a, actual: b })
    }
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Bit-exact equality of two observations. No tolerance.
pub fn obs_equal(a: &Observation, b: &Observation) -> Result<bool> {
    check_len(a.len(), b.len())?;
    Ok(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()))
}
