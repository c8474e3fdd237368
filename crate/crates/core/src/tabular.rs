//! Exact checks on finite deterministic goal-conditioned MDPs.
//!
//! Two distances appear here and are kept apart on purpose: `reach time` is
//! the number of steps needed to enter a target set, and `diam` is the
//! largest reach time between two members of a goal set.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::Serialize;

use crate::envs::{GridGoalWorld, GridMove};
use crate::error::{Error, Result};
use crate::replay::{QEvaluator, RelabeledSample};
use crate::types::RewardConstants;
use crate::Rng;

/// Deterministic MDP with a transition table and a self-loop action.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularGoalMDP {
    next: Vec<Vec<usize>>,
    n_actions: usize,
    stay_action: usize,
}

impl TabularGoalMDP {
    /// `next[s][a]` must be total and `next[s][stay_action] == s` everywhere.
    pub fn new(next: Vec<Vec<usize>>, stay_action: usize) -> Result<Self> {
        let n_states = next.len();
        let n_actions = next.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("MDP needs states and actions".into()));
        }
        for (s, row) in next.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Config(format!("state {s} has {} actions", row.len())));
            }
            if let Some(&bad) = row.iter().find(|&&t| t >= n_states) {
                return Err(Error::Config(format!("state {s} leads to missing state {bad}")));
            }
            if row.get(stay_action) != Some(&s) {
                return Err(Error::Config(format!("action {stay_action} is not a self-loop at {s}")));
            }
        }
        Ok(Self { next, n_actions, stay_action })
    }

    /// The grid world's transition table, actions in [`GridMove::ALL`] order.
    pub fn from_grid(grid: &GridGoalWorld) -> Self {
        let next = (0..grid.n_cells())
            .map(|cell| GridMove::ALL.iter().map(|&m| grid.next_cell(cell, m)).collect())
            .collect();
        let stay = GridMove::ALL.iter().position(|m| *m == GridMove::Stay).unwrap();
        Self::new(next, stay).expect("grid tables are total with a stay move")
    }

    /// States `0..n` on a line; actions are left, right, stay.
    pub fn path(n: usize) -> Self {
        let next = (0..n).map(|s| vec![s.saturating_sub(1), (s + 1).min(n - 1), s]).collect();
        Self::new(next, 2).expect("path tables are total")
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn stay_action(&self) -> usize {
        self.stay_action
    }

    pub fn next_state(&self, s: usize, a: usize) -> usize {
        self.next[s][a]
    }

    /// Indicator mask of a single state.
    pub fn singleton(&self, g: usize) -> Vec<bool> {
        let mut m = vec![false; self.n_states()];
        m[g] = true;
        m
    }

    /// States within `radius` steps of `center`.
    pub fn ball(&self, center: usize, radius: usize) -> Vec<bool> {
        let dist = self.distances_from(center);
        dist.iter().map(|d| d.is_some_and(|d| d <= radius)).collect()
    }

    /// BFS distances from `start` to every state.
    fn distances_from(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_states()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            let d = dist[s].unwrap();
            for &t in &self.next[s] {
                if dist[t].is_none() {
                    dist[t] = Some(d + 1);
                    queue.push_back(t);
                }
            }
        }
        dist
    }
}

/// Minimum steps from `start` until the state lies in `target`, 0 if it
/// already does. With `first_action`, that action is taken first and counts
/// as one step.
pub fn bfs_reach_time(
    mdp: &TabularGoalMDP,
    start: usize,
    first_action: Option<usize>,
    target: &[bool],
) -> Result<usize> {
    if target.len() != mdp.n_states() {
        return Err(Error::Dimension { expected: mdp.n_states(), actual: target.len() });
    }
    if let Some(a) = first_action {
        return Ok(1 + bfs_reach_time(mdp, mdp.next_state(start, a), None, target)?);
    }
    mdp.distances_from(start)
        .iter()
        .zip(target)
        .filter_map(|(d, &t)| if t { *d } else { None })
        .min()
        .ok_or(Error::Unreachable(start))
}

/// Exact optimal `Q(s, a)` for one target set: reward `R+` when the next
/// state is in `target`, else `R-`. Iterates until the sup-norm change drops
/// below `tol·(1 - γ)`.
pub fn value_iteration(
    mdp: &TabularGoalMDP,
    target: &[bool],
    c: &RewardConstants,
    tol: f64,
) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if target.len() != mdp.n_states() {
        return Err(Error::Dimension { expected: mdp.n_states(), actual: target.len() });
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let reward: Vec<f64> = target.iter().map(|&t| if t { c.r_plus } else { c.r_minus }).collect();
    let mut v = vec![c.q_min(); ns];
    let mut q = vec![0.0; ns * na];
    let threshold = tol * (1.0 - c.gamma);
    // a contraction from within the value range needs far fewer sweeps
    for _ in 0..1_000_000 {
        for s in 0..ns {
            for a in 0..na {
                let t = mdp.next[s][a];
                q[s * na + a] = reward[t] + c.gamma * v[t];
            }
        }
        let mut change: f64 = 0.0;
        for s in 0..ns {
            let best = q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            change = change.max((best - v[s]).abs());
            v[s] = best;
        }
        if change < threshold {
            break;
        }
    }
    Ok(q)
}

/// Closed-form optimal value after `d` negative rewards:
/// `γ^d/(1-γ)·(R+ - R-) + R-/(1-γ)`.
pub fn closed_form_q(c: &RewardConstants, d: usize) -> f64 {
    c.gamma.powi(d as i32) / (1.0 - c.gamma) * (c.r_plus - c.r_minus) + c.q_min()
}

/// Exact indicator-on-states `Q(s, a, g)` for every goal state `g`.
#[derive(Clone, Debug)]
pub struct ExactQ {
    q: Vec<f64>,
    n_states: usize,
    n_actions: usize,
    pub constants: RewardConstants,
}

impl ExactQ {
    pub fn compute(mdp: &TabularGoalMDP, c: &RewardConstants, tol: f64) -> Result<Self> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut q = vec![0.0; ns * na * ns];
        for g in 0..ns {
            let qg = value_iteration(mdp, &mdp.singleton(g), c, tol)?;
            for (sa, v) in qg.into_iter().enumerate() {
                q[sa * ns + g] = v;
            }
        }
        Ok(Self { q, n_states: ns, n_actions: na, constants: *c })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q(&self, s: usize, a: usize, g: usize) -> f64 {
        self.q[(s * self.n_actions + a) * self.n_states + g]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ClosedFormReport {
    pub max_abs_error: f64,
    pub worst: Option<(usize, usize, usize)>,
    /// Largest `Q(d + 1) - Q(d)` over the observed reach times; negative
    /// when Q strictly decreases in d.
    pub max_increment: f64,
}

/// Compares `exact` with [`closed_form_q`] at the BFS reach time, using
/// `gamma` in the closed form (the true γ unless self-testing).
pub fn check_closed_form(
    mdp: &TabularGoalMDP,
    exact: &ExactQ,
    gamma: f64,
) -> Result<ClosedFormReport> {
    let c = RewardConstants { gamma, ..exact.constants };
    let ns = mdp.n_states();
    let mut report = ClosedFormReport { max_increment: f64::NEG_INFINITY, ..Default::default() };
    let mut max_d = 0;
    for g in 0..ns {
        let target = mdp.singleton(g);
        // reach time from every state to g, by reverse lookup
        let to_g: Vec<usize> =
            (0..ns).map(|s| bfs_reach_time(mdp, s, None, &target)).collect::<Result<_>>()?;
        for s in 0..ns {
            for a in 0..mdp.n_actions() {
                let d = to_g[mdp.next_state(s, a)];
                max_d = max_d.max(d);
                let err = (exact.q(s, a, g) - closed_form_q(&c, d)).abs();
                if err > report.max_abs_error || report.worst.is_none() {
                    report.max_abs_error = err.max(report.max_abs_error);
                    report.worst = Some((s, a, g));
                }
            }
        }
    }
    for d in 0..=max_d {
        report.max_increment =
            report.max_increment.max(closed_form_q(&c, d + 1) - closed_form_q(&c, d));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationViolation {
    pub state: usize,
    pub action: usize,
    pub goal: usize,
    pub q: f64,
    pub reaches_goal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    pub q0: f64,
    /// `min Q - q0` over triples whose next state is the goal.
    pub positive_margin: f64,
    /// `min q0 - Q` over all other triples.
    pub negative_margin: f64,
    pub violations: Vec<SeparationViolation>,
}

impl SeparationReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && self.positive_margin > 0.0 && self.negative_margin > 0.0
    }
}

/// Checks `Q > q0` exactly when the action lands on the goal, and
/// `Q ≤ R- + γR+/(1-γ) < q0` otherwise.
pub fn verify_q0_separation(mdp: &TabularGoalMDP, exact: &ExactQ, q0: f64) -> SeparationReport {
    let c = exact.constants;
    let mut report = SeparationReport {
        q0,
        positive_margin: f64::INFINITY,
        negative_margin: f64::INFINITY,
        violations: Vec::new(),
    };
    let bound = c.q_negative_max();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let t = mdp.next_state(s, a);
            for g in 0..mdp.n_states() {
                let q = exact.q(s, a, g);
                let reaches_goal = t == g;
                let ok = if reaches_goal {
                    report.positive_margin = report.positive_margin.min(q - q0);
                    q > q0
                } else {
                    report.negative_margin = report.negative_margin.min(q0 - q);
                    q <= bound + 1e-9 && q < q0
                };
                if !ok {
                    report.violations.push(SeparationViolation { state: s, action: a, goal: g, q, reaches_goal });
                }
            }
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReachReport {
    pub start: usize,
    pub goal: usize,
    pub radius: usize,
    /// Steps to enter the goal set.
    pub t1: usize,
    /// Steps to reach the goal itself.
    pub t2: usize,
    /// Steps for the greedy indicator policy to enter the goal set.
    pub t3: usize,
    pub diam: usize,
}

impl ReachReport {
    pub fn holds(&self) -> bool {
        self.t3 <= self.t2 && self.t2 <= self.t1 + self.diam
    }

    /// `t1 + diam - t3`.
    pub fn slack(&self) -> i64 {
        (self.t1 + self.diam) as i64 - self.t3 as i64
    }
}

/// Index of the largest value; ties within `1e-9` go to the lowest index.
pub fn greedy_action(q_row: &[f64]) -> usize {
    let best = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    q_row.iter().position(|&q| q >= best - 1e-9).expect("non-empty action set")
}

/// One bound instance: goal set = radius ball around `goal`.
pub fn reach_instance(
    mdp: &TabularGoalMDP,
    c: &RewardConstants,
    start: usize,
    goal: usize,
    radius: usize,
) -> Result<ReachReport> {
    let goal_set = mdp.ball(goal, radius);
    let t1 = bfs_reach_time(mdp, start, None, &goal_set)?;
    let t2 = bfs_reach_time(mdp, start, None, &mdp.singleton(goal))?;
    let members: Vec<usize> = (0..mdp.n_states()).filter(|&s| goal_set[s]).collect();
    let mut diam = 0;
    for &u in &members {
        for &v in &members {
            diam = diam.max(bfs_reach_time(mdp, u, None, &mdp.singleton(v))?);
        }
    }
    let q = value_iteration(mdp, &mdp.singleton(goal), c, 1e-12)?;
    let na = mdp.n_actions();
    let mut s = start;
    let mut t3 = 0;
    while !goal_set[s] {
        if t3 > mdp.n_states() {
            return Err(Error::Unreachable(start));
        }
        s = mdp.next_state(s, greedy_action(&q[s * na..(s + 1) * na]));
        t3 += 1;
    }
    Ok(ReachReport { start, goal, radius, t1, t2, t3, diam })
}

/// Random instances with uniform start, goal and radius from `radii`.
pub fn verify_suboptimality_bound(
    mdp: &TabularGoalMDP,
    c: &RewardConstants,
    n_instances: usize,
    radii: &[usize],
    rng: &mut Rng,
) -> Result<Vec<ReachReport>> {
    if radii.is_empty() {
        return Err(Error::Config("need at least one radius".into()));
    }
    (0..n_instances)
        .map(|_| {
            let start = rng.random_range(0..mdp.n_states());
            let goal = rng.random_range(0..mdp.n_states());
            let radius = radii[rng.random_range(0..radii.len())];
            reach_instance(mdp, c, start, goal, radius)
        })
        .collect()
}

/// Exact Q as a critic over grid-world one-hot observations.
pub struct GridQCritic<'a> {
    pub exact: &'a ExactQ,
    pub grid: &'a GridGoalWorld,
}

fn one_hot_index(v: &[f64]) -> usize {
    v.iter().position(|x| *x == 1.0).expect("one-hot grid observation")
}

impl QEvaluator for GridQCritic<'_> {
    fn q_values(&self, batch: &[RelabeledSample]) -> Vec<f64> {
        batch
            .iter()
            .map(|s| {
                let cell = one_hot_index(s.obs.as_slice());
                let goal = one_hot_index(s.goal_obs.as_slice());
                let mv = GridMove::from_action(s.action.as_slice()[0]);
                let a = GridMove::ALL.iter().position(|m| *m == mv).unwrap();
                self.exact.q(cell, a, goal)
            })
            .collect()
    }
}
