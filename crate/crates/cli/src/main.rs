use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use goalrl::harness::{
    emit_curves, run_ablation, run_experiment, run_flip_study, verify_theory, ExperimentConfig, Variant,
    VerifyConfig, DEFAULT_FLIP_RATES,
};

/// Relative output directories are resolved against this variable when set.
const OUTPUT_ROOT_VAR: &str = "GOALRL_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "goalrl", version, about = "Goal-conditioned RL experiments with indicator rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set epochs=5 --set agent.hidden=[64,64]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one config over all its seeds.
    Train(ConfigArgs),
    /// Train several variants on the config's environment.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated variants; defaults to the five reward recipes.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// False-negative vs false-positive reward flips.
    FlipStudy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
    },
    /// Exact tabular checks of the value-function results.
    Verify {
        #[arg(long, value_delimiter = ',', default_value = "6,8")]
        grids: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        bound_side: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        radii: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt γ in the closed form; the run must then fail.
        #[arg(long)]
        self_test: bool,
        /// Directory for the report files.
        #[arg(long, default_value = "verify")]
        out: PathBuf,
    },
    /// Plot metrics CSVs as an SVG.
    Curves {
        #[arg(long, default_value = "success")]
        metric: String,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Property(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml_str(&text, &args.overrides)?;
    cfg.output_dir = resolve(&cfg.output_dir);
    Ok(cfg)
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            let out = run_experiment(&cfg).map_err(anyhow::Error::from)?;
            for row in out.final_rows() {
                println!(
                    "seed {}: success {:.3}, final distance {:.4}",
                    row.seed, row.success, row.final_distance
                );
            }
            println!("wrote {}", out.aggregate_csv.display());
        }
        Command::Ablate { cfg, variants } => {
            let base = load_config(&cfg)?;
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::ABLATION.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<goalrl::Result<_>>().map_err(anyhow::Error::from)?
            };
            for s in run_ablation(&base, &variants).map_err(anyhow::Error::from)? {
                println!(
                    "{:<26} success {:.3} ± {:.3}  distance {:.4} ± {:.4}",
                    s.label, s.success_mean, s.success_std, s.final_distance_mean, s.final_distance_std
                );
            }
        }
        Command::FlipStudy { cfg, rates } => {
            let base = load_config(&cfg)?;
            let rates = if rates.is_empty() { DEFAULT_FLIP_RATES.to_vec() } else { rates };
            for r in run_flip_study(&base, &rates).map_err(anyhow::Error::from)? {
                println!(
                    "rate {:.2} {}: success {:.3} ± {:.3}  distance {:.4} ± {:.4}",
                    r.rate, r.arm, r.success_mean, r.success_std, r.final_distance_mean, r.final_distance_std
                );
            }
        }
        Command::Verify { grids, bound_side, radii, instances, seed, self_test, out } => {
            let cfg = VerifyConfig { grid_sides: grids, bound_side, radii, instances, seed, self_test };
            let report = verify_theory(&cfg).map_err(anyhow::Error::from)?;
            let dir = resolve(&out);
            report.write(&dir).map_err(anyhow::Error::from)?;
            print!("{}", report.to_text());
            if !report.passed() {
                return Err(Failure::Property(format!("see {}", dir.join("theory_report.txt").display())));
            }
        }
        Command::Curves { metric, out, csvs } => {
            let paths: Vec<&Path> = csvs.iter().map(PathBuf::as_path).collect();
            let out = resolve(&out);
            emit_curves(&paths, &metric, &out).map_err(anyhow::Error::from)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Property(msg)) => {
            eprintln!("property violation: {msg}");
            ExitCode::from(2)
        }
    }
}
