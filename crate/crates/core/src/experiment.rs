//! Multi-seed runs and ablation sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EmbeddingGrid, SplitManifest};
use crate::error::{Result, StampError};
use crate::metrics::{aggregate_seeds, EvalReport, SeedAggregate};
use crate::model::{param_count, Aggregator, Mixer, PeMode, StampConfig};
use crate::training::{evaluate, fit, EpochRecord, TrainConfig, TrainState};

/// Samples resolved from a manifest, in manifest order.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<EmbeddingGrid>,
    pub validation: Vec<EmbeddingGrid>,
    pub test: Vec<EmbeddingGrid>,
}

impl Splits {
    pub fn resolve(dataset: &Dataset, manifest: &SplitManifest) -> Result<Self> {
        manifest.validate(Some(dataset))?;
        Ok(Self {
            train: dataset.select(&manifest.train)?,
            validation: dataset.select(&manifest.validation)?,
            test: dataset.select(&manifest.test)?,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_monitor: f64,
    pub epochs_completed: usize,
    pub diverged: Option<String>,
    pub test: EvalReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub param_count: usize,
    pub runs: Vec<SeedRun>,
    pub aggregate: SeedAggregate,
}

impl RunSummary {
    pub fn any_diverged(&self) -> bool {
        self.runs.iter().any(|r| r.diverged.is_some())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("param_count = {}\n", self.param_count);
        for r in &self.runs {
            out.push_str(&format!(
                "[seed {}]\nbest_epoch = {}\nbest_val_monitor = {:.6}\n",
                r.seed, r.best_epoch, r.best_monitor
            ));
            if let Some(d) = &r.diverged {
                out.push_str(&format!("diverged = {d}\n"));
            }
            out.push_str(&r.test.to_text());
        }
        out.push_str("[aggregate]\n");
        out.push_str(&self.aggregate.to_text());
        out
    }
}

/// Trains on `train`, selects on `validation`, and scores the selected
/// checkpoint on `test`.
pub fn run_seed(
    config: &StampConfig,
    train_config: &TrainConfig,
    splits: &Splits,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainState, EvalReport)> {
    let state = fit(
        config,
        train_config,
        &splits.train,
        &splits.validation,
        seed,
        on_epoch,
    )?;
    let report = evaluate(&state.best, &splits.test, train_config.batch_size)?;
    Ok((state, report))
}

pub fn run_seeds(
    config: &StampConfig,
    train_config: &TrainConfig,
    splits: &Splits,
    seeds: &[u64],
    mut on_epoch: impl FnMut(u64, &EpochRecord),
    mut on_run: impl FnMut(&TrainState, &EvalReport) -> Result<()>,
) -> Result<RunSummary> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (state, test) = run_seed(config, train_config, splits, seed, |r| on_epoch(seed, r))?;
        on_run(&state, &test)?;
        runs.push(SeedRun {
            seed,
            best_epoch: state.best_epoch,
            best_monitor: state.best_monitor,
            epochs_completed: state.epochs_completed,
            diverged: state
                .diverged
                .as_ref()
                .map(|d| format!("epoch {} step {}: {}", d.epoch, d.step, d.reason)),
            test,
        });
    }
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.test.clone()).collect();
    Ok(RunSummary {
        param_count: param_count(config),
        aggregate: aggregate_seeds(&reports)?,
        runs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Pe,
    Mixer,
    Aggregator,
    #[serde(rename = "D")]
    Dim,
}

impl FromStr for AblationAxis {
    type Err = StampError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pe" => Ok(Self::Pe),
            "mixer" => Ok(Self::Mixer),
            "aggregator" => Ok(Self::Aggregator),
            "D" | "d" | "dim" => Ok(Self::Dim),
            other => Err(StampError::Usage(format!(
                "unknown ablation axis `{other}` (expected pe, mixer, aggregator or D)"
            ))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pe => "pe",
            Self::Mixer => "mixer",
            Self::Aggregator => "aggregator",
            Self::Dim => "D",
        })
    }
}

pub const DIM_SWEEP: [usize; 5] = [8, 16, 32, 64, 128];

/// Variants along one axis with the other components taken from `base`.
pub fn ablation_variants(axis: AblationAxis, base: &StampConfig) -> Vec<(String, StampConfig)> {
    let with = |f: &dyn Fn(&mut StampConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match axis {
        AblationAxis::Pe => PeMode::ALL
            .iter()
            .map(|&m| (format!("pe={m}"), with(&|c| c.pe_mode = m)))
            .collect(),
        AblationAxis::Mixer => [Mixer::BasicGmlp, Mixer::CrissCrossGmlp]
            .iter()
            .map(|&m| (format!("mixer={m}"), with(&|c| c.mixer = m)))
            .collect(),
        AblationAxis::Aggregator => [Aggregator::Mean, Aggregator::Mhap]
            .iter()
            .map(|&a| (format!("aggregator={a}"), with(&|c| c.aggregator = a)))
            .collect(),
        AblationAxis::Dim => DIM_SWEEP
            .iter()
            .map(|&d| (format!("D={d}"), with(&|c| c.model_dim = d)))
            .collect(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub config: StampConfig,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let names: Vec<String> = self
            .rows
            .first()
            .map(|r| {
                r.summary
                    .aggregate
                    .metrics
                    .iter()
                    .map(|m| m.name.clone())
                    .collect()
            })
            .unwrap_or_default();
        let mut out = format!("{:<22} {:>10}", "variant", "params");
        for n in &names {
            out.push_str(&format!(" {:>24}", n));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<22} {:>10}", r.label, r.summary.param_count));
            for m in &r.summary.aggregate.metrics {
                out.push_str(&format!(" {:>24}", format!("{:.4} ± {:.4}", m.mean, m.std)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn run_variants(
    axis: AblationAxis,
    variants: Vec<(String, StampConfig)>,
    train_config: &TrainConfig,
    splits: &Splits,
    seeds: &[u64],
    mut on_epoch: impl FnMut(&str, u64, &EpochRecord),
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for (label, config) in variants {
        let summary = run_seeds(
            &config,
            train_config,
            splits,
            seeds,
            |s, r| on_epoch(&label, s, r),
            |_, _| Ok(()),
        )?;
        rows.push(AblationRow {
            label,
            config,
            summary,
        });
    }
    Ok(AblationTable {
        axis,
        seeds: seeds.to_vec(),
        rows,
    })
}

pub fn run_ablation(
    axis: AblationAxis,
    base: &StampConfig,
    train_config: &TrainConfig,
    splits: &Splits,
    seeds: &[u64],
    on_epoch: impl FnMut(&str, u64, &EpochRecord),
) -> Result<AblationTable> {
    run_variants(
        axis,
        ablation_variants(axis, base),
        train_config,
        splits,
        seeds,
        on_epoch,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_counts() {
        let base = StampConfig::new(8, 4, 32, 4);
        assert_eq!(ablation_variants(AblationAxis::Pe, &base).len(), 4);
        assert_eq!(ablation_variants(AblationAxis::Mixer, &base).len(), 2);
        assert_eq!(ablation_variants(AblationAxis::Aggregator, &base).len(), 2);
        assert_eq!(ablation_variants(AblationAxis::Dim, &base).len(), 5);
        assert!("tf".parse::<AblationAxis>().is_err());
    }
}
