use super::{EnvSpec, GoalEnv};
use crate::types::{Action, GroundTruthState, Observation};
use crate::Rng;

/// Moves on the grid, in tabular action-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridMove {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl GridMove {
    pub const ALL: [GridMove; 5] =
        [GridMove::Up, GridMove::Down, GridMove::Left, GridMove::Right, GridMove::Stay];

    /// Splits `[-1, 1]` into five equal bins, in [`GridMove::ALL`] order.
    pub fn from_action(a: f64) -> Self {
        let bin = (((a.clamp(-1.0, 1.0) + 1.0) / 2.0) * 5.0).floor() as usize;
        Self::ALL[bin.min(4)]
    }

    /// Centre of this move's action bin.
    pub fn to_action(self) -> f64 {
        let idx = Self::ALL.iter().position(|m| *m == self).unwrap() as f64;
        -1.0 + (2.0 * idx + 1.0) / 5.0
    }
}

/// `n × n` grid with 4-connected moves plus stay, clipped at the walls.
///
/// State is `(row, col)`; the observation is the one-hot cell index
/// `row * n + col`. Success is exact cell identity.
#[derive(Clone, Debug)]
pub struct GridGoalWorld {
    spec: EnvSpec,
    side: usize,
}

impl GridGoalWorld {
    pub fn new(side: usize) -> Self {
        assert!(side >= 2, "grid needs at least 2x2 cells");
        let spec = EnvSpec {
            name: format!("grid_goal_world:{side}"),
            obs_dim: side * side,
            state_dim: 2,
            action_dim: 1,
            horizon: 4 * side,
            // integer cells: distance <= 0.5 holds only for identical cells
            epsilon: 0.5,
            action_scale: 1.0,
        };
        spec.validate().expect("valid grid spec");
        Self { spec, side }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_cells(&self) -> usize {
        self.side * self.side
    }

    pub fn cell_of(&self, state: &GroundTruthState) -> usize {
        let s = state.as_slice();
        s[0] as usize * self.side + s[1] as usize
    }

    pub fn state_of(&self, cell: usize) -> GroundTruthState {
        GroundTruthState::from_finite(vec![(cell / self.side) as f64, (cell % self.side) as f64])
    }

    /// Cell reached from `cell` by `mv`.
    pub fn next_cell(&self, cell: usize, mv: GridMove) -> usize {
        let (r, c) = (cell / self.side, cell % self.side);
        let last = self.side - 1;
        let (r, c) = match mv {
            GridMove::Up => (r.saturating_sub(1), c),
            GridMove::Down => ((r + 1).min(last), c),
            GridMove::Left => (r, c.saturating_sub(1)),
            GridMove::Right => (r, (c + 1).min(last)),
            GridMove::Stay => (r, c),
        };
        r * self.side + c
    }
}

impl GoalEnv for GridGoalWorld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_state(&self, rng: &mut Rng) -> GroundTruthState {
        use rand::Rng as _;
        self.state_of(rng.random_range(0..self.n_cells()))
    }

    fn transition(&self, state: &GroundTruthState, action: &Action) -> GroundTruthState {
        let mv = GridMove::from_action(action.as_slice()[0]);
        self.state_of(self.next_cell(self.cell_of(state), mv))
    }

    fn render(&self, state: &GroundTruthState) -> Observation {
        let mut v = vec![0.0; self.n_cells()];
        v[self.cell_of(state)] = 1.0;
        Observation::from_finite(v)
    }

    fn achieved_goal(&self, state: &GroundTruthState) -> Vec<f64> {
        state.as_slice().to_vec()
    }

    fn true_success(&self, state: &GroundTruthState, goal_state: &GroundTruthState) -> bool {
        self.cell_of(state) == self.cell_of(goal_state)
    }
}
