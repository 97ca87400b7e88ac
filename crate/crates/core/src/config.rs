//! Run configuration: a flat `key = value` text file plus overrides.
//!
//! Blank lines and `#` comments are ignored. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `events`, `edges`, `workdir` | input files and experiment directory |
//! | `holdout_weeks`, `split_seed` | evaluation window and valid/test shuffle seed |
//! | `learning_rate`, `lmp_size`, `friend_size`, `layers`, `warmup_steps`, `warmup_unit`, `tolerance`, `batch_size`, `max_epochs`, `seed`, `eval_seed`, `dim`, `heads`, `ff_mult`, `max_len`, `dropout`, `init_std`, `neighbour_history`, `volume_weighted`, `eval_prefixes`, `grad_clip`, `adam_beta1`, `adam_beta2`, `adam_epsilon` | training settings |
//! | `ablations` | comma list of `no_lmp,no_sf,no_gal,with_pe,no_uli,no_ali`, or `none` |
//! | `no_lmp` ... `no_ali` | individual ablation switches (`true`/`false`) |
//! | `ks` | comma list of metric cutoffs |
//! | `grid.<name>` | comma list of values for one searchable setting |
//! | `synth.<field>` | synthetic generator settings |
//!
//! Later assignments win, so overrides are applied after the file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::model::Ablations;
use crate::neighbours::NeighbourHistory;
use crate::synth::SynthSpec;
use crate::trainer::{GridSpec, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub events: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
    pub holdout_weeks: i64,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub synth: SynthSpec,
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            events: None,
            edges: None,
            workdir: None,
            holdout_weeks: 1,
            split_seed: 7,
            train: TrainConfig::default(),
            grid: GridSpec::standard(),
            synth: SynthSpec::default(),
            ks: vec![10, 20],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        message: format!("cannot parse {value:?}: {e}"),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let out = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<Vec<T>, _>>()?;
    if out.is_empty() {
        return Err(ConfigError::Value {
            key: key.to_string(),
            message: "list is empty".into(),
        });
    }
    Ok(out)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn history_name(h: NeighbourHistory) -> &'static str {
    match h {
        NeighbourHistory::Last => "last",
        NeighbourHistory::AllConcat => "all_concat",
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "events" => self.events = Some(value.into()),
            "edges" => self.edges = Some(value.into()),
            "workdir" => self.workdir = Some(value.into()),
            "holdout_weeks" => self.holdout_weeks = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "ks" => self.ks = parse_list(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "lmp_size" => t.lmp_size = parse(key, value)?,
            "friend_size" => t.friend_size = parse(key, value)?,
            "layers" => t.layers = parse(key, value)?,
            "warmup_steps" => t.warmup_steps = parse(key, value)?,
            "warmup_unit" => t.warmup_unit = parse(key, value)?,
            "tolerance" => t.tolerance = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "eval_seed" => t.eval_seed = parse(key, value)?,
            "dim" => t.dim = parse(key, value)?,
            "heads" => t.heads = parse(key, value)?,
            "ff_mult" => t.ff_mult = parse(key, value)?,
            "max_len" => t.max_len = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "init_std" => t.init_std = parse(key, value)?,
            "volume_weighted" => t.volume_weighted = parse(key, value)?,
            "eval_prefixes" => t.eval_prefixes = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_epsilon" => t.adam_epsilon = parse(key, value)?,
            "grad_clip" => {
                t.grad_clip = match value {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "neighbour_history" => {
                t.neighbour_history = match value {
                    "last" => NeighbourHistory::Last,
                    "all_concat" => NeighbourHistory::AllConcat,
                    other => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            message: format!("expected last or all_concat, got {other:?}"),
                        })
                    }
                }
            }
            "ablations" => {
                let mut a = Ablations::default();
                for name in value.split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none") {
                    a.set(name, true).map_err(|e| ConfigError::Value {
                        key: key.into(),
                        message: e.to_string(),
                    })?;
                }
                t.ablations = a;
            }
            k if Ablations::NAMES.contains(&k) => {
                let on: bool = parse(key, value)?;
                t.ablations.set(k, on).expect("name checked");
            }
            k if k.starts_with("grid.") => self.set_grid(&k[5..], key, value)?,
            k if k.starts_with("synth.") => self.set_synth(&k[6..], key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn set_grid(&mut self, name: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let g = &mut self.grid;
        match name {
            "learning_rate" => g.learning_rate = parse_list(key, value)?,
            "friend_size" => g.friend_size = parse_list(key, value)?,
            "lmp_size" => g.lmp_size = parse_list(key, value)?,
            "layers" => g.layers = parse_list(key, value)?,
            "warmup_steps" => g.warmup_steps = parse_list(key, value)?,
            "tolerance" => g.tolerance = parse_list(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn set_synth(&mut self, name: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let s = &mut self.synth;
        match name {
            "users" => s.users = parse(key, value)?,
            "items" => s.items = parse(key, value)?,
            "clusters" => s.clusters = parse(key, value)?,
            "sessions_per_user" => s.sessions_per_user = parse(key, value)?,
            "min_session_len" => s.min_session_len = parse(key, value)?,
            "max_session_len" => s.max_session_len = parse(key, value)?,
            "alpha" => s.alpha = parse(key, value)?,
            "beta" => s.beta = parse(key, value)?,
            "weeks" => s.weeks = parse(key, value)?,
            "friends_per_user" => s.friends_per_user = parse(key, value)?,
            "pool_overlap" => s.pool_overlap = parse(key, value)?,
            "drift_period_weeks" => s.drift_period_weeks = parse(key, value)?,
            "seed" => s.seed = parse(key, value)?,
            "hot_set_size" => {
                s.hot_set_size = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`RunConfig::from_text`]
    /// reads back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let g = &self.grid;
        let s = &self.synth;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        for (k, p) in [("events", &self.events), ("edges", &self.edges), ("workdir", &self.workdir)] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        kv("holdout_weeks", self.holdout_weeks.to_string());
        kv("split_seed", self.split_seed.to_string());
        kv("ks", join(&self.ks));
        kv("learning_rate", t.learning_rate.to_string());
        kv("lmp_size", t.lmp_size.to_string());
        kv("friend_size", t.friend_size.to_string());
        kv("layers", t.layers.to_string());
        kv("warmup_steps", t.warmup_steps.to_string());
        kv(
            "warmup_unit",
            match t.warmup_unit {
                crate::trainer::WarmupUnit::Steps => "steps",
                crate::trainer::WarmupUnit::Epochs => "epochs",
            }
            .into(),
        );
        kv("tolerance", t.tolerance.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("max_epochs", t.max_epochs.to_string());
        kv("seed", t.seed.to_string());
        kv("eval_seed", t.eval_seed.to_string());
        kv("dim", t.dim.to_string());
        kv("heads", t.heads.to_string());
        kv("ff_mult", t.ff_mult.to_string());
        kv("max_len", t.max_len.to_string());
        kv("dropout", t.dropout.to_string());
        kv("init_std", t.init_std.to_string());
        kv("neighbour_history", history_name(t.neighbour_history).into());
        kv("volume_weighted", t.volume_weighted.to_string());
        kv(
            "eval_prefixes",
            match t.eval_prefixes {
                crate::metrics::EvalPrefixes::All => "all",
                crate::metrics::EvalPrefixes::Last => "last",
            }
            .into(),
        );
        kv("grad_clip", t.grad_clip.map_or("none".into(), |c| c.to_string()));
        kv("adam_beta1", t.adam_beta1.to_string());
        kv("adam_beta2", t.adam_beta2.to_string());
        kv("adam_epsilon", t.adam_epsilon.to_string());
        let enabled = t.ablations.enabled();
        kv(
            "ablations",
            if enabled.is_empty() {
                "none".into()
            } else {
                enabled.join(",")
            },
        );
        kv("grid.learning_rate", join(&g.learning_rate));
        kv("grid.friend_size", join(&g.friend_size));
        kv("grid.lmp_size", join(&g.lmp_size));
        kv("grid.layers", join(&g.layers));
        kv("grid.warmup_steps", join(&g.warmup_steps));
        kv("grid.tolerance", join(&g.tolerance));
        kv("synth.users", s.users.to_string());
        kv("synth.items", s.items.to_string());
        kv("synth.clusters", s.clusters.to_string());
        kv("synth.sessions_per_user", s.sessions_per_user.to_string());
        kv("synth.min_session_len", s.min_session_len.to_string());
        kv("synth.max_session_len", s.max_session_len.to_string());
        kv("synth.alpha", s.alpha.to_string());
        kv("synth.beta", s.beta.to_string());
        kv("synth.weeks", s.weeks.to_string());
        kv("synth.friends_per_user", s.friends_per_user.to_string());
        kv("synth.pool_overlap", s.pool_overlap.to_string());
        kv("synth.hot_set_size", s.hot_set_size.map_or("none".into(), |h| h.to_string()));
        kv("synth.drift_period_weeks", s.drift_period_weeks.to_string());
        kv("synth.seed", s.seed.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::from_text("# run\nlearning_rate = 0.01\nablations = no_lmp, with_pe\n\ngrid.layers = 1,3\n").unwrap();
        assert_eq!(c.train.learning_rate, 0.01);
        assert!(c.train.ablations.no_lmp && c.train.ablations.with_pe);
        assert_eq!(c.grid.layers, vec![1, 3]);
        c.apply_override("learning_rate=0.002").unwrap();
        c.apply_override("no_ali=true").unwrap();
        assert_eq!(c.train.learning_rate, 0.002);
        assert!(c.train.ablations.no_uli, "no_ali implies no_uli");
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("events = a.tsv\nsynth.hot_set_size = 6\ngrad_clip = 5\nablations = no_sf\nks = 5,10,20")
            .unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(
            RunConfig::from_text("bogus = 1"),
            Err(ConfigError::UnknownKey("bogus".into()))
        );
        assert!(matches!(RunConfig::from_text("layers = x"), Err(ConfigError::Value { key, .. }) if key == "layers"));
        assert_eq!(RunConfig::from_text("layers"), Err(ConfigError::Syntax { line: 1 }));
        assert!(RunConfig::from_text("ablations = no_foo").is_err());
    }
}
