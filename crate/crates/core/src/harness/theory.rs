use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::envs::{GoalEnv, GridGoalWorld};
use crate::error::Result;
use crate::replay::derive_q0;
use crate::seeded_rng;
use crate::tabular::{
    check_closed_form, verify_q0_separation, verify_suboptimality_bound, ClosedFormReport, ExactQ,
    ReachReport, SeparationReport, TabularGoalMDP,
};

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub grid_sides: Vec<usize>,
    pub bound_side: usize,
    pub radii: Vec<usize>,
    pub instances: usize,
    pub seed: u64,
    /// Perturbs γ in the closed form; the suite must then fail.
    pub self_test: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { grid_sides: vec![6, 8], bound_side: 10, radii: vec![1, 2, 3], instances: 200, seed: 0, self_test: false }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridCheck {
    pub side: usize,
    pub closed_form: ClosedFormReport,
    pub separation: SeparationReport,
}

#[derive(Clone, Debug)]
pub struct TheoryReport {
    pub grids: Vec<GridCheck>,
    pub bound: Vec<ReachReport>,
    pub failures: Vec<String>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.grids {
            writeln!(
                s,
                "grid {0}x{0}: max |Q - closed form| = {1:e}; q0 = {2}; margins +{3} / -{4}; separation violations = {5}",
                g.side,
                g.closed_form.max_abs_error,
                g.separation.q0,
                g.separation.positive_margin,
                g.separation.negative_margin,
                g.separation.violations.len()
            )
            .unwrap();
        }
        let flagged = self.bound.iter().filter(|r| !r.holds()).count();
        let min_slack = self.bound.iter().map(ReachReport::slack).min().unwrap_or(0);
        writeln!(s, "bound: {} instances, {} violations, min slack {}", self.bound.len(), flagged, min_slack).unwrap();
        if self.passed() {
            writeln!(s, "result: ok").unwrap();
        } else {
            for f in &self.failures {
                writeln!(s, "FAIL {f}").unwrap();
            }
        }
        s
    }

    /// Writes `theory_report.txt` and `bound_instances.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("theory_report.txt"), self.to_text())?;
        let mut w = csv::Writer::from_path(dir.join("bound_instances.csv"))?;
        w.write_record(["start", "goal", "radius", "t1", "t2", "t3", "diam", "slack", "holds"])?;
        for r in &self.bound {
            w.write_record([
                r.start.to_string(),
                r.goal.to_string(),
                r.radius.to_string(),
                r.t1.to_string(),
                r.t2.to_string(),
                r.t3.to_string(),
                r.diam.to_string(),
                r.slack().to_string(),
                r.holds().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed-form identity and q0 separation on every grid, then random
/// suboptimality-bound instances.
pub fn verify_theory(cfg: &VerifyConfig) -> Result<TheoryReport> {
    let mut failures = Vec::new();
    let mut grids = Vec::with_capacity(cfg.grid_sides.len());
    for &side in &cfg.grid_sides {
        let grid = GridGoalWorld::new(side);
        let c = grid.reward_constants();
        let mdp = TabularGoalMDP::from_grid(&grid);
        let exact = ExactQ::compute(&mdp, &c, 1e-12)?;
        let gamma = if cfg.self_test { c.gamma - 0.01 } else { c.gamma };
        let closed_form = check_closed_form(&mdp, &exact, gamma)?;
        if !(closed_form.max_abs_error < 1e-9) {
            failures.push(format!(
                "closed form on {side}x{side}: error {:e} at (s, a, g) = {:?}",
                closed_form.max_abs_error, closed_form.worst
            ));
        }
        if !(closed_form.max_increment < 0.0) {
            failures.push(format!("closed form on {side}x{side} is not decreasing in reach time"));
        }
        let separation = verify_q0_separation(&mdp, &exact, derive_q0(&c)?);
        if !separation.holds() {
            failures.push(format!(
                "q0 separation on {side}x{side}: {} violations, first {:?}",
                separation.violations.len(),
                separation.violations.first()
            ));
        }
        grids.push(GridCheck { side, closed_form, separation });
    }
    let grid = GridGoalWorld::new(cfg.bound_side);
    let mdp = TabularGoalMDP::from_grid(&grid);
    let bound = verify_suboptimality_bound(
        &mdp,
        &grid.reward_constants(),
        cfg.instances,
        &cfg.radii,
        &mut seeded_rng(cfg.seed, 0),
    )?;
    for r in bound.iter().filter(|r| !r.holds()) {
        failures.push(format!("suboptimality bound: {r:?}"));
    }
    Ok(TheoryReport { grids, bound, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig { grid_sides: vec![4], bound_side: 5, instances: 20, ..Default::default() }
    }

    #[test]
    fn small_suite_passes() {
        let r = verify_theory(&small()).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert!(r.grids[0].closed_form.max_abs_error < 1e-9);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("bound_instances.csv")).unwrap();
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn self_test_mode_fails() {
        let r = verify_theory(&VerifyConfig { self_test: true, ..small() }).unwrap();
        assert!(!r.passed());
        assert!(r.to_text().contains("FAIL closed form"));
    }

    #[test]
    fn radius_zero_has_zero_slack() {
        let r = verify_theory(&VerifyConfig { radii: vec![0], ..small() }).unwrap();
        assert!(r.passed());
        assert!(r.bound.iter().all(|b| b.slack() == 0));
    }
}
