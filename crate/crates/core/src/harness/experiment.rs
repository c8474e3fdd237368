use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use crate::agent::{evaluate, run_episode, DDPGAgent};
use crate::envs::GoalEnv;
use crate::error::{Error, Result};
use crate::replay::{FilterConfig, ReplayBuffer};
use crate::rewards::{diagnose_batch, FlippedOracleReward, IndicatorReward, OracleReward, RewardFn};
use crate::seeded_rng;

/// RNG stream ids; every seed owns one stream per purpose.
pub mod streams {
    pub const COLLECT: u64 = 0;
    pub const INIT: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const REWARD_NOISE: u64 = 3;
    pub const EVAL: u64 = 4;
}

pub const METRICS_HEADER: &str = "epoch,cycle,seed,success,final_distance,fn_rate,fp_rate,reward_accuracy,positive_fraction,filtered_fraction,mean_q,wall_seconds";

/// One evaluation point. Reward diagnostics and filter/Q statistics are
/// averaged over the epoch's training batches; `cycle` counts cycles since
/// the start of the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub cycle: usize,
    pub seed: u64,
    pub success: f64,
    pub final_distance: f64,
    pub fn_rate: f64,
    pub fp_rate: f64,
    pub reward_accuracy: f64,
    pub positive_fraction: f64,
    pub filtered_fraction: f64,
    pub mean_q: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub const METRICS: [&'static str; 9] = [
        "success",
        "final_distance",
        "fn_rate",
        "fp_rate",
        "reward_accuracy",
        "positive_fraction",
        "filtered_fraction",
        "mean_q",
        "wall_seconds",
    ];

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "success" => self.success,
            "final_distance" => self.final_distance,
            "fn_rate" => self.fn_rate,
            "fp_rate" => self.fp_rate,
            "reward_accuracy" => self.reward_accuracy,
            "positive_fraction" => self.positive_fraction,
            "filtered_fraction" => self.filtered_fraction,
            "mean_q" => self.mean_q,
            "wall_seconds" => self.wall_seconds,
            _ => return None,
        })
    }
}

/// Everything one seed produced.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    /// Words drawn from the collection stream; independent of rewards.
    pub collect_rng_words: u128,
    pub agent: DDPGAgent,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub runs: Vec<SeedRun>,
    pub seed_csvs: Vec<PathBuf>,
    pub aggregate_csv: PathBuf,
}

impl ExperimentOutput {
    /// Last-epoch rows, one per seed.
    pub fn final_rows(&self) -> Vec<MetricsRow> {
        self.runs.iter().map(|r| *r.rows.last().expect("at least one epoch")).collect()
    }
}

#[derive(Default)]
struct EpochAccumulator {
    fn_rate: f64,
    fp_rate: f64,
    accuracy: f64,
    positive: f64,
    filtered: f64,
    mean_q: f64,
    diag_batches: usize,
    steps: usize,
}

fn reward_fn_for<'e>(variant: Variant, env: &'e dyn GoalEnv, seed: u64) -> Box<dyn RewardFn + 'e> {
    let constants = env.reward_constants();
    let oracle = OracleReward { env, constants };
    match variant.flips() {
        Some(flips) => Box::new(FlippedOracleReward {
            oracle,
            flips,
            rng: seeded_rng(seed, streams::REWARD_NOISE),
        }),
        None if variant.uses_indicator() => Box::new(IndicatorReward { constants }),
        None => Box::new(oracle),
    }
}

/// Trains one seed and returns its metrics; writes nothing.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let kind = cfg.env_kind()?;
    let env = kind.build();
    let env: &dyn GoalEnv = env.as_ref();
    let spec = env.spec().clone();
    let c = env.reward_constants();
    let agent_cfg = cfg.agent_config(c, kind.is_pixel());
    let relabel = cfg.relabel_config(agent_cfg.batch_size);
    let filter = FilterConfig::from_constants(&c, cfg.variant.filtered())?;

    let mut collect_rng = seeded_rng(seed, streams::COLLECT);
    let mut replay_rng = seeded_rng(seed, streams::REPLAY);
    let mut agent = DDPGAgent::new(agent_cfg, spec.obs_dim, spec.action_dim, &mut seeded_rng(seed, streams::INIT))?;
    let mut buffer = ReplayBuffer::new(spec.horizon, cfg.buffer_capacity)?;
    let mut reward_fn = reward_fn_for(cfg.variant, env, seed);

    let start = Instant::now();
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut acc = EpochAccumulator::default();
        for _ in 0..cfg.cycles_per_epoch {
            for _ in 0..cfg.episodes_per_cycle {
                let (episode, _) = run_episode(&agent, env, &mut collect_rng, true)?;
                buffer.store_episode(&episode)?;
                agent.observe_episode(&episode)?;
            }
            for _ in 0..cfg.train_steps_per_cycle {
                let batch = buffer.sample_relabeled(&relabel, reward_fn.as_mut(), &mut replay_rng)?;
                let entries: Vec<_> = batch.iter().map(|s| s.diagnostic_entry()).collect();
                match diagnose_batch(&entries, env, &c) {
                    Ok(d) => {
                        acc.fn_rate += d.fn_rate;
                        acc.fp_rate += d.fp_rate;
                        acc.accuracy += d.accuracy;
                        acc.positive += d.positive_fraction;
                        acc.diag_batches += 1;
                    }
                    Err(Error::DiagnosticsUnavailable) => {}
                    Err(e) => return Err(e),
                }
                let stats = agent.train_on_batch(batch, &filter)?;
                acc.filtered += stats.filtered_fraction;
                acc.mean_q += stats.mean_q;
                acc.steps += 1;
            }
        }
        let report = evaluate(&agent, env, cfg.eval_episodes, &mut seeded_rng(seed, streams::EVAL))?;
        let nd = acc.diag_batches.max(1) as f64;
        let ns = acc.steps.max(1) as f64;
        rows.push(MetricsRow {
            epoch,
            cycle: (epoch + 1) * cfg.cycles_per_epoch,
            seed,
            success: report.success,
            final_distance: report.final_distance,
            fn_rate: acc.fn_rate / nd,
            fp_rate: acc.fp_rate / nd,
            reward_accuracy: acc.accuracy / nd,
            positive_fraction: acc.positive / nd,
            filtered_fraction: acc.filtered / ns,
            mean_q: acc.mean_q / ns,
            wall_seconds: if cfg.record_wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
        });
    }
    Ok(SeedRun { seed, rows, collect_rng_words: collect_rng.get_word_pos(), agent })
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        return Err(Error::Schema(format!("{}: unexpected header `{header}`", path.display())));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Header of the cross-seed aggregate: `epoch,cycle,n_seeds`, then
/// `<metric>_mean,<metric>_std` per metric.
pub fn aggregate_header() -> Vec<String> {
    let mut h = vec!["epoch".to_string(), "cycle".to_string(), "n_seeds".to_string()];
    for m in MetricsRow::METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h
}

/// Mean and sample standard deviation across seeds, row by row.
pub fn write_aggregate_csv(path: &Path, per_seed: &[Vec<MetricsRow>]) -> Result<()> {
    let n_rows = per_seed.first().map_or(0, Vec::len);
    if per_seed.iter().any(|r| r.len() != n_rows) {
        return Err(Error::Schema("seeds have different numbers of epochs".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(aggregate_header())?;
    for i in 0..n_rows {
        let first = per_seed[0][i];
        let mut rec = vec![first.epoch.to_string(), first.cycle.to_string(), per_seed.len().to_string()];
        for m in MetricsRow::METRICS {
            let vals: Vec<f64> = per_seed.iter().map(|rows| rows[i].metric(m).unwrap()).collect();
            let (mean, std) = mean_std(&vals);
            rec.push(format!("{mean}"));
            rec.push(format!("{std}"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every seed and writes `seed_<n>.csv`, `aggregate.csv` and the
/// resolved `config.toml` under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut seed_csvs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, seed)?;
        let path = cfg.output_dir.join(format!("seed_{seed}.csv"));
        write_metrics_csv(&path, &run.rows)?;
        seed_csvs.push(path);
        runs.push(run);
    }
    let aggregate_csv = cfg.output_dir.join("aggregate.csv");
    let per_seed: Vec<Vec<MetricsRow>> = runs.iter().map(|r| r.rows.clone()).collect();
    write_aggregate_csv(&aggregate_csv, &per_seed)?;
    Ok(ExperimentOutput { runs, seed_csvs, aggregate_csv })
}

/// Final-epoch summary of one arm across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub label: String,
    pub success_mean: f64,
    pub success_std: f64,
    pub final_distance_mean: f64,
    pub final_distance_std: f64,
}

impl ArmSummary {
    pub fn from_output(label: String, out: &ExperimentOutput) -> Self {
        let last = out.final_rows();
        let (success_mean, success_std) = mean_std(&last.iter().map(|r| r.success).collect::<Vec<_>>());
        let (final_distance_mean, final_distance_std) =
            mean_std(&last.iter().map(|r| r.final_distance).collect::<Vec<_>>());
        Self { label, success_mean, success_std, final_distance_mean, final_distance_std }
    }
}

/// Runs each variant on the base config into `<output_dir>/<variant>/` and
/// writes `ablation.csv`.
pub fn run_ablation(base: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<ArmSummary>> {
    base.validate()?;
    let mut summaries = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = ExperimentConfig {
            variant: v,
            output_dir: base.output_dir.join(v.to_string().replace(':', "_")),
            ..base.clone()
        };
        let out = run_experiment(&cfg)?;
        summaries.push(ArmSummary::from_output(v.to_string(), &out));
    }
    fs::create_dir_all(&base.output_dir)?;
    let mut w = csv::Writer::from_path(base.output_dir.join("ablation.csv"))?;
    w.write_record(["variant", "success_mean", "success_std", "final_distance_mean", "final_distance_std"])?;
    for s in &summaries {
        w.write_record([
            s.label.clone(),
            s.success_mean.to_string(),
            s.success_std.to_string(),
            s.final_distance_mean.to_string(),
            s.final_distance_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(summaries)
}

pub const DEFAULT_FLIP_RATES: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub rate: f64,
    pub arm: String,
    pub success_mean: f64,
    pub success_std: f64,
    pub final_distance_mean: f64,
    pub final_distance_std: f64,
}

/// Trains a false-negative and a false-positive arm at every rate and writes
/// `flip_summary.csv`. The base variant is replaced per arm.
pub fn run_flip_study(base: &ExperimentConfig, rates: &[f64]) -> Result<Vec<FlipRow>> {
    for &r in rates {
        Variant::FlipFn(r).validate()?;
    }
    let mut rows = Vec::with_capacity(2 * rates.len());
    for &rate in rates {
        for (arm, variant) in [("fn", Variant::FlipFn(rate)), ("fp", Variant::FlipFp(rate))] {
            let cfg = ExperimentConfig {
                variant,
                output_dir: base.output_dir.join(format!("{arm}_{rate}")),
                ..base.clone()
            };
            let out = run_experiment(&cfg)?;
            let s = ArmSummary::from_output(arm.to_string(), &out);
            rows.push(FlipRow {
                rate,
                arm: arm.to_string(),
                success_mean: s.success_mean,
                success_std: s.success_std,
                final_distance_mean: s.final_distance_mean,
                final_distance_std: s.final_distance_std,
            });
        }
    }
    fs::create_dir_all(&base.output_dir)?;
    let mut w = csv::Writer::from_path(base.output_dir.join("flip_summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
