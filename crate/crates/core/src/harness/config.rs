use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::replay::RelabelConfig;
use crate::rewards::FlipConfig;

/// Reward and relabeling recipe of one training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Oracle,
    Indicator,
    IndicatorBalance,
    IndicatorFilter,
    IndicatorBalanceFilter,
    FlipFn(f64),
    FlipFp(f64),
}

impl Variant {
    pub const ABLATION: [Variant; 5] = [
        Variant::Oracle,
        Variant::Indicator,
        Variant::IndicatorBalance,
        Variant::IndicatorFilter,
        Variant::IndicatorBalanceFilter,
    ];

    pub fn uses_indicator(self) -> bool {
        matches!(
            self,
            Variant::Indicator
                | Variant::IndicatorBalance
                | Variant::IndicatorFilter
                | Variant::IndicatorBalanceFilter
        )
    }

    pub fn balanced(self) -> bool {
        matches!(self, Variant::IndicatorBalance | Variant::IndicatorBalanceFilter)
    }

    pub fn filtered(self) -> bool {
        matches!(self, Variant::IndicatorFilter | Variant::IndicatorBalanceFilter)
    }

    pub fn flips(self) -> Option<FlipConfig> {
        match self {
            Variant::FlipFn(r) => Some(FlipConfig::false_negatives(r)),
            Variant::FlipFp(r) => Some(FlipConfig::false_positives(r)),
            _ => None,
        }
    }

    /// Balanced variants use (0.45, 0.45, 0.1); everything else relabels
    /// with a future goal 90% of the time and keeps the original otherwise.
    pub fn relabel_config(self, capacity: usize, batch_size: usize) -> RelabelConfig {
        if self.balanced() {
            RelabelConfig::balanced(capacity, batch_size)
        } else {
            RelabelConfig::future_only(capacity, batch_size)
        }
    }

    pub fn validate(self) -> Result<()> {
        if let Some(f) = self.flips() {
            f.validate()?;
        }
        Ok(())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Oracle => write!(f, "oracle"),
            Variant::Indicator => write!(f, "indicator"),
            Variant::IndicatorBalance => write!(f, "indicator_balance"),
            Variant::IndicatorFilter => write!(f, "indicator_filter"),
            Variant::IndicatorBalanceFilter => write!(f, "indicator_balance_filter"),
            Variant::FlipFn(r) => write!(f, "flip_fn:{r}"),
            Variant::FlipFp(r) => write!(f, "flip_fp:{r}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Flip variants take their rate as `flip_fn:0.3` or `flip_fn(0.3)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let rate = |rest: &str| -> Result<f64> {
            let r = rest.trim_start_matches([':', '(']).trim_end_matches(')');
            let v: f64 = r.parse().map_err(|_| Error::Config(format!("bad flip rate `{r}`")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("flip rate {v} outside [0, 1]")));
            }
            Ok(v)
        };
        Ok(match s.as_str() {
            "oracle" => Variant::Oracle,
            "indicator" => Variant::Indicator,
            "indicator_balance" => Variant::IndicatorBalance,
            "indicator_filter" => Variant::IndicatorFilter,
            "indicator_balance_filter" => Variant::IndicatorBalanceFilter,
            _ if s.starts_with("flip_fn") => Variant::FlipFn(rate(&s["flip_fn".len()..])?),
            _ if s.starts_with("flip_fp") => Variant::FlipFp(rate(&s["flip_fp".len()..])?),
            _ => return Err(Error::Config(format!("unknown variant `{s}`"))),
        })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Optional agent settings; unset fields keep the per-environment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOverrides {
    pub tau: Option<f64>,
    pub lr_actor: Option<f64>,
    pub lr_critic: Option<f64>,
    pub batch_size: Option<usize>,
    pub explore_sigma: Option<f64>,
    pub explore_random_prob: Option<f64>,
    pub normalize_obs: Option<bool>,
    pub hidden: Option<Vec<usize>>,
    pub action_l2: Option<f64>,
}

impl AgentOverrides {
    pub fn apply(&self, mut cfg: AgentConfig) -> AgentConfig {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(tau, lr_actor, lr_critic, batch_size, explore_sigma, explore_random_prob, normalize_obs, hidden, action_l2);
        cfg
    }
}

/// Explicit relabel probabilities, overriding the variant's mapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelabelOverride {
    pub p_achieved: f64,
    pub p_future: f64,
    pub p_original: f64,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2]
}
fn default_epochs() -> usize {
    30
}
fn default_cycles() -> usize {
    16
}
fn default_episodes_per_cycle() -> usize {
    1
}
fn default_train_steps() -> usize {
    40
}
fn default_eval_episodes() -> usize {
    20
}
fn default_capacity() -> usize {
    1_000_000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One training run, fully described by a TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub variant: Variant,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_cycles")]
    pub cycles_per_epoch: usize,
    #[serde(default = "default_episodes_per_cycle")]
    pub episodes_per_cycle: usize,
    #[serde(default = "default_train_steps")]
    pub train_steps_per_cycle: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default)]
    pub relabel: Option<RelabelOverride>,
    #[serde(default)]
    pub agent: AgentOverrides,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Off by default so metric files stay byte-identical across runs.
    #[serde(default)]
    pub record_wall_clock: bool,
}

impl ExperimentConfig {
    /// Minimal config with every default.
    pub fn new(env: &str, variant: Variant) -> Self {
        Self {
            env: env.to_string(),
            variant,
            seeds: default_seeds(),
            epochs: default_epochs(),
            cycles_per_epoch: default_cycles(),
            episodes_per_cycle: default_episodes_per_cycle(),
            train_steps_per_cycle: default_train_steps(),
            eval_episodes: default_eval_episodes(),
            buffer_capacity: default_capacity(),
            relabel: None,
            agent: AgentOverrides::default(),
            output_dir: default_output_dir(),
            record_wall_clock: false,
        }
    }

    /// Parses TOML, then applies `key=value` overrides. Keys are dotted
    /// paths (`agent.hidden=[64, 64]`); values are TOML, falling back to a
    /// bare string.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        self.env.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.env_kind()?;
        self.variant.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        if self.epochs == 0 || self.cycles_per_epoch == 0 || self.episodes_per_cycle == 0 {
            return Err(Error::Config("epochs, cycles and episodes per cycle must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        let env = kind.build();
        let agent = self.agent_config(env.reward_constants(), kind.is_pixel());
        agent.validate()?;
        if self.buffer_capacity < env.spec().horizon {
            return Err(Error::Config("buffer_capacity is shorter than one episode".into()));
        }
        self.relabel_config(agent.batch_size).validate()
    }

    pub fn agent_config(&self, c: crate::RewardConstants, pixel: bool) -> AgentConfig {
        self.agent.apply(AgentConfig::new(c, pixel))
    }

    pub fn relabel_config(&self, batch_size: usize) -> RelabelConfig {
        let base = self.variant.relabel_config(self.buffer_capacity, batch_size);
        match self.relabel {
            Some(r) => RelabelConfig {
                p_achieved: r.p_achieved,
                p_future: r.p_future,
                p_original: r.p_original,
                ..base
            },
            None => base,
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
