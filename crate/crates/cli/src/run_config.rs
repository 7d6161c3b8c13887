//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Flags given on the command line are applied after the file, in
//! order, through the same typed setter.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stamp_core::model::{Aggregator, Mixer, PeMode, StampConfig};
use stamp_core::training::{AdamWConfig, TrainConfig, CANONICAL_SEEDS};
use stamp_core::{Result, StampError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub model_dim: usize,
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub queries: usize,
    pub pe: PeMode,
    pub mixer: Mixer,
    pub aggregator: Aggregator,
    pub lambda: f64,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub zscore: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub max_lr: f64,
    pub pct_start: f64,
    pub final_div: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = StampConfig::new(1, 1, 1, 2);
        let train = TrainConfig::default();
        Self {
            dataset: None,
            manifest: None,
            out_dir: PathBuf::from("runs"),
            seeds: CANONICAL_SEEDS.to_vec(),
            model_dim: model.model_dim,
            depth: model.depth,
            hidden: model.hidden,
            heads: model.heads,
            queries: model.queries,
            pe: model.pe_mode,
            mixer: model.mixer,
            aggregator: model.aggregator,
            lambda: model.lambda_mix,
            dropout: model.dropout,
            layer_norm_eps: model.layer_norm_eps,
            zscore: false,
            epochs: train.epochs,
            batch_size: train.batch_size,
            initial_lr: train.initial_lr,
            max_lr: train.max_lr,
            pct_start: train.pct_start,
            final_div: train.final_div,
            beta1: train.optimizer.beta1,
            beta2: train.optimizer.beta2,
            eps: train.optimizer.eps,
            weight_decay: train.optimizer.weight_decay,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| StampError::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(StampError::Config(format!(
            "`{key}`: expected a boolean, got `{value}`"
        ))),
    }
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse("seeds", s))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(StampError::Config("`seeds` is empty".into()));
    }
    Ok(seeds)
}

impl RunConfig {
    pub const KEYS: [&'static str; 26] = [
        "dataset",
        "manifest",
        "out_dir",
        "seeds",
        "model_dim",
        "depth",
        "hidden",
        "heads",
        "queries",
        "pe",
        "mixer",
        "aggregator",
        "lambda",
        "dropout",
        "layer_norm_eps",
        "zscore",
        "epochs",
        "batch_size",
        "initial_lr",
        "max_lr",
        "pct_start",
        "final_div",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "dataset" => self.dataset = path(value),
            "manifest" => self.manifest = path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seeds" => self.seeds = parse_seeds(value)?,
            "model_dim" => self.model_dim = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "queries" => self.queries = parse(key, value)?,
            "pe" => self.pe = parse(key, value)?,
            "mixer" => self.mixer = parse(key, value)?,
            "aggregator" => self.aggregator = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "layer_norm_eps" => self.layer_norm_eps = parse(key, value)?,
            "zscore" => self.zscore = parse_bool(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "initial_lr" => self.initial_lr = parse(key, value)?,
            "max_lr" => self.max_lr = parse(key, value)?,
            "pct_start" => self.pct_start = parse(key, value)?,
            "final_div" => self.final_div = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            other => return Err(StampError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` assignments in order.
    pub fn apply<'a>(&mut self, assignments: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for a in assignments {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| StampError::Config(format!("expected key=value, got `{a}`")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                StampError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            c.set(k.trim(), v)
                .map_err(|e| StampError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        Some(match key {
            "dataset" => path(&self.dataset),
            "manifest" => path(&self.manifest),
            "out_dir" => self.out_dir.display().to_string(),
            "seeds" => self
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "model_dim" => self.model_dim.to_string(),
            "depth" => self.depth.to_string(),
            "hidden" => self.hidden.to_string(),
            "heads" => self.heads.to_string(),
            "queries" => self.queries.to_string(),
            "pe" => self.pe.to_string(),
            "mixer" => self.mixer.to_string(),
            "aggregator" => self.aggregator.to_string(),
            "lambda" => self.lambda.to_string(),
            "dropout" => self.dropout.to_string(),
            "layer_norm_eps" => self.layer_norm_eps.to_string(),
            "zscore" => self.zscore.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "initial_lr" => self.initial_lr.to_string(),
            "max_lr" => self.max_lr.to_string(),
            "pct_start" => self.pct_start.to_string(),
            "final_div" => self.final_div.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            _ => return None,
        })
    }

    /// Every key in a fixed order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
        }
        out
    }

    /// Architecture for data of shape `S×T×ℓ` with `n_classes` labels.
    pub fn model_config(&self, dims: [usize; 3], n_classes: usize) -> Result<StampConfig> {
        let mut c = StampConfig::new(dims[0], dims[1], dims[2], n_classes);
        c.model_dim = self.model_dim;
        c.depth = self.depth;
        c.hidden = self.hidden;
        c.heads = self.heads;
        c.queries = self.queries;
        c.pe_mode = self.pe;
        c.mixer = self.mixer;
        c.aggregator = self.aggregator;
        c.lambda_mix = self.lambda;
        c.dropout = self.dropout;
        c.layer_norm_eps = self.layer_norm_eps;
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            max_lr: self.max_lr,
            pct_start: self.pct_start,
            final_div: self.final_div,
            optimizer: AdamWConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
        };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply([
            "dataset=a.steb",
            "seeds=1,2",
            "pe=ST",
            "zscore=true",
            "max_lr=0.001",
        ])
        .unwrap();
        assert_eq!(RunConfig::parse_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_key_and_bad_value() {
        assert!(RunConfig::parse_text("nope = 1").is_err());
        let e = RunConfig::parse_text("# c\n\nepochs = x")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 3"), "{e}");
        assert!(RunConfig::default().apply(["mixer=transformer"]).is_err());
    }
}
