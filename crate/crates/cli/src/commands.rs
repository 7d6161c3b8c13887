use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stamp_core::data::{
    generate_interaction_dataset, generate_separable_dataset, read_dataset, write_dataset, Dataset,
    InteractionSpec, SeparableSpec, SplitManifest,
};
use stamp_core::experiment::{run_ablation, run_seeds, AblationAxis, Splits};
use stamp_core::gradcheck::{check_model, random_problem, tiny_config, GradcheckReport};
use stamp_core::model::{load_checkpoint, param_count, save_checkpoint, StampConfig, StampParams};
use stamp_core::training::{evaluate, ABLATION_SEEDS};
use stamp_core::{Result, StampError, Tensor};

use crate::RunConfig;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| StampError::Usage(format!("`{key}` is required (config key or --{key})")))
}

fn open_dataset(path: &Path, zscore: bool) -> Result<Dataset> {
    let mut ds = read_dataset(path).map_err(|e| match e {
        StampError::Io(io) => StampError::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })?;
    if zscore {
        ds.zscore_samples();
    }
    Ok(ds)
}

fn open_manifest(path: &Path) -> Result<SplitManifest> {
    SplitManifest::load(path).map_err(|e| match e {
        StampError::Io(io) => StampError::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

/// Writes the resolved config and the raw overrides that produced it.
pub fn echo_config(dir: &Path, config: &RunConfig, sources: &[String]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), config.to_text())?;
    write_json(&dir.join("config.json"), config)?;
    let mut overrides = sources.join("\n");
    overrides.push('\n');
    fs::write(dir.join("overrides.txt"), overrides)?;
    Ok(())
}

fn append_line(path: &Path, line: &str) {
    let written = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| writeln!(f, "{line}"));
    if let Err(e) = written {
        eprintln!("warning: cannot append to {}: {e}", path.display());
    }
}

/// Trains one model per seed. Returns false if any run diverged.
pub fn train(config: &RunConfig, sources: &[String], quiet: bool) -> Result<bool> {
    let dataset = open_dataset(require(&config.dataset, "dataset")?, config.zscore)?;
    let manifest = open_manifest(require(&config.manifest, "manifest")?)?;
    let splits = Splits::resolve(&dataset, &manifest)?;
    let model = config.model_config(dataset.dims, dataset.n_classes)?;
    let train = config.train_config()?;
    let out = &config.out_dir;
    echo_config(out, config, sources)?;
    fs::write(
        out.join("model.json"),
        serde_json::to_string_pretty(&model)? + "\n",
    )?;
    for seed in &config.seeds {
        let dir = out.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir)?;
        File::create(dir.join("train.log"))?;
    }

    let summary = run_seeds(
        &model,
        &train,
        &splits,
        &config.seeds,
        |seed, record| {
            let line = record.to_line();
            if !quiet {
                eprintln!("seed={seed} {line}");
            }
            append_line(&out.join(format!("seed_{seed}")).join("train.log"), &line);
        },
        |state, report| {
            let dir = out.join(format!("seed_{}", state.seed));
            save_checkpoint(&state.best, dir.join("checkpoint.stmp"))?;
            let mut text = format!(
                "best_epoch = {}\nbest_val_monitor = {:.6}\n",
                state.best_epoch, state.best_monitor
            );
            if let Some(d) = &state.diverged {
                text.push_str(&format!(
                    "diverged = epoch {} step {}: {}\n",
                    d.epoch, d.step, d.reason
                ));
            }
            text.push_str(&report.to_text());
            fs::write(dir.join("report.txt"), text)?;
            write_json(&dir.join("report.json"), report)?;
            Ok(())
        },
    )?;
    fs::write(out.join("aggregate.txt"), summary.aggregate.to_text())?;
    write_json(&out.join("aggregate.json"), &summary.aggregate)?;
    fs::write(out.join("summary.txt"), summary.to_text())?;
    write_json(&out.join("summary.json"), &summary)?;
    print!("{}", summary.to_text());
    for r in summary.runs.iter().filter(|r| r.diverged.is_some()) {
        eprintln!(
            "error: seed {} diverged: {}",
            r.seed,
            r.diverged.as_deref().unwrap_or("")
        );
    }
    Ok(!summary.any_diverged())
}

pub struct EvaluateArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub manifest: Option<&'a Path>,
    pub split: &'a str,
    pub out: Option<&'a Path>,
    pub zscore: bool,
    pub batch_size: usize,
}

pub fn evaluate_checkpoint(args: &EvaluateArgs) -> Result<()> {
    let model = load_checkpoint(args.checkpoint)?;
    let dataset = open_dataset(args.dataset, args.zscore)?;
    let c = &model.config;
    let want = [c.spatial, c.temporal, c.embed_dim];
    if dataset.dims != want || dataset.n_classes != c.n_classes {
        return Err(StampError::Data(format!(
            "dataset dims {:?} with {} classes do not match checkpoint dims {want:?} with {} classes",
            dataset.dims, dataset.n_classes, c.n_classes
        )));
    }
    let samples = match args.manifest {
        Some(path) => {
            let m = open_manifest(path)?;
            m.validate(Some(&dataset))?;
            let ids = match args.split {
                "train" => &m.train,
                "validation" => &m.validation,
                "test" => &m.test,
                other => {
                    return Err(StampError::Usage(format!(
                        "unknown split `{other}` (expected train, validation or test)"
                    )))
                }
            };
            dataset.select(ids)?
        }
        None => dataset.samples,
    };
    if samples.is_empty() {
        return Err(StampError::Data("no samples to evaluate".into()));
    }
    let report = evaluate(&model, &samples, args.batch_size)?;
    print!("{}", report.to_text());
    if let Some(out) = args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("report.txt"), report.to_text())?;
        write_json(&out.join("report.json"), &report)?;
    }
    Ok(())
}

/// Runs every variant of `axis` over `seeds` (the ablation subset by default).
pub fn ablate(
    config: &RunConfig,
    sources: &[String],
    axis: AblationAxis,
    seeds: Option<&[u64]>,
    quiet: bool,
) -> Result<bool> {
    let dataset = open_dataset(require(&config.dataset, "dataset")?, config.zscore)?;
    let manifest = open_manifest(require(&config.manifest, "manifest")?)?;
    let splits = Splits::resolve(&dataset, &manifest)?;
    let base = config.model_config(dataset.dims, dataset.n_classes)?;
    let train = config.train_config()?;
    let seeds = seeds.unwrap_or(&ABLATION_SEEDS);
    let out = &config.out_dir;
    echo_config(out, config, sources)?;
    let log = out.join("ablation.log");
    File::create(&log)?;
    let table = run_ablation(
        axis,
        &base,
        &train,
        &splits,
        seeds,
        |label, seed, record| {
            let line = format!("variant={label} seed={seed} {}", record.to_line());
            if !quiet {
                eprintln!("{line}");
            }
            append_line(&log, &line);
        },
    )?;
    let text = table.to_text();
    fs::write(out.join("ablation.txt"), &text)?;
    write_json(&out.join("ablation.json"), &table)?;
    print!("{text}");
    Ok(table.rows.iter().all(|r| !r.summary.any_diverged()))
}

pub struct GradcheckArgs<'a> {
    pub seed: u64,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Table whose analytic gradient is negated before comparison.
    pub sabotage: Option<&'a str>,
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport> {
    let config = tiny_config();
    let (params, x, y) = random_problem(&config, args.batch, args.seed)?;
    if let Some(name) = args.sabotage {
        if !params.named().iter().any(|(n, _)| n == name) {
            return Err(StampError::Usage(format!(
                "no parameter table named `{name}`"
            )));
        }
    }
    let flip = |name: &str, t: &mut Tensor<f64>| {
        if Some(name) == args.sabotage {
            t.data_mut().iter_mut().for_each(|v| *v = -*v);
        }
    };
    check_model(
        &config,
        &params,
        &x,
        &y,
        args.step,
        args.tolerance,
        Some(&flip),
    )
}

pub enum GenerateKind {
    Interaction(InteractionSpec),
    Separable(SeparableSpec),
}

/// Writes `dataset.steb`, `manifest.json` and the generator settings to `out`.
pub fn generate(kind: &GenerateKind, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let (dataset, manifest) = match kind {
        GenerateKind::Interaction(spec) => {
            write_json(&out.join("generator.json"), spec)?;
            generate_interaction_dataset(spec)?
        }
        GenerateKind::Separable(spec) => {
            write_json(&out.join("generator.json"), spec)?;
            generate_separable_dataset(spec)?
        }
    };
    write_dataset(&dataset, out.join("dataset.steb"))?;
    manifest.save(out.join("manifest.json"))?;
    println!(
        "wrote {} samples of {:?} ({} classes) to {}",
        dataset.len(),
        dataset.dims,
        dataset.n_classes,
        out.display()
    );
    Ok(())
}

/// Closed-form count plus the per-table breakdown of an initialized model.
pub fn param_count_report(config: &StampConfig, tables: bool) -> Result<String> {
    let total = param_count(config);
    let mut out = format!("param_count = {total}\n");
    if tables {
        let params = StampParams::<Tensor<f32>>::init(config, 0)?;
        for (name, shape) in params.shapes() {
            let n: usize = shape.iter().product();
            out.push_str(&format!("{name} {shape:?} {n}\n"));
        }
    }
    Ok(out)
}
