use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stamp_cli::commands::{self, EvaluateArgs, GenerateKind, GradcheckArgs};
use stamp_cli::run_config::parse_seeds;
use stamp_cli::{exit, exit_code, RunConfig};
use stamp_core::data::{InteractionSpec, SeparableSpec};
use stamp_core::experiment::AblationAxis;
use stamp_core::gradcheck::{DEFAULT_STEP, DEFAULT_TOLERANCE};
use stamp_core::{Result, StampError};

#[derive(Parser)]
#[command(
    name = "stamp",
    version,
    about = "Train and evaluate spatial-temporal adapters on embedding grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
}

impl ConfigArgs {
    /// Resolved config plus the ordered list of sources that produced it.
    fn resolve(&self) -> Result<(RunConfig, Vec<String>)> {
        let mut sources = Vec::new();
        let mut config = match &self.config {
            Some(path) => {
                sources.push(format!("file {}", path.display()));
                RunConfig::load(path)?
            }
            None => RunConfig::default(),
        };
        let mut assignments = self.set.clone();
        let flag =
            |key: &str, v: &Option<PathBuf>| v.as_ref().map(|p| format!("{key}={}", p.display()));
        assignments.extend(flag("dataset", &self.dataset));
        assignments.extend(flag("manifest", &self.manifest));
        assignments.extend(flag("out_dir", &self.out));
        assignments.extend(self.seeds.as_ref().map(|s| format!("seeds={s}")));
        config.apply(assignments.iter().map(String::as_str))?;
        sources.extend(assignments.into_iter().map(|a| format!("set {a}")));
        Ok((config, sources))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Interaction,
    Separable,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and report test metrics of the best-validation checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        quiet: bool,
    },
    /// Score a saved checkpoint on a dataset or one manifest split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        zscore: bool,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Compare variants along one axis: pe, mixer, aggregator or D.
    ///
    /// Uses seeds 654,114,25 unless --seeds is given.
    Ablate {
        #[arg(long)]
        axis: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        quiet: bool,
    },
    /// Finite-difference check of every parameter table of a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        batch: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Negate the analytic gradient of this table before comparing.
        #[arg(long, value_name = "TABLE")]
        sabotage: Option<String>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a synthetic dataset and split manifest.
    Generate {
        #[arg(long, value_enum, default_value = "interaction")]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        spatial: usize,
        #[arg(long, default_value_t = 4)]
        temporal: usize,
        #[arg(long, default_value_t = 32)]
        embed_dim: usize,
        #[arg(long, default_value_t = 4)]
        n_classes: usize,
        #[arg(long, default_value_t = 2000)]
        n_samples: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Signature amplitude (defaults: 1.0 interaction, 0.5 separable).
        #[arg(long)]
        amplitude: Option<f64>,
        /// Interaction data only: omit the displaced signatures of the other classes.
        #[arg(long)]
        no_distractors: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Trainable parameter count for a grid shape and architecture.
    ParamCount {
        #[arg(long, default_value_t = 22)]
        spatial: usize,
        #[arg(long, default_value_t = 4)]
        temporal: usize,
        #[arg(long, default_value_t = 1024)]
        embed_dim: usize,
        #[arg(long, default_value_t = 4)]
        n_classes: usize,
        /// List every table with its shape.
        #[arg(long)]
        tables: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<u8> {
    let completed = |ok: bool| if ok { exit::OK } else { exit::INCOMPLETE };
    match cli.command {
        Command::Train { config, quiet } => {
            let (config, sources) = config.resolve()?;
            Ok(completed(commands::train(&config, &sources, quiet)?))
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            manifest,
            split,
            out,
            zscore,
            batch_size,
        } => {
            commands::evaluate_checkpoint(&EvaluateArgs {
                checkpoint: &checkpoint,
                dataset: &dataset,
                manifest: manifest.as_deref(),
                split: &split,
                out: out.as_deref(),
                zscore,
                batch_size,
            })?;
            Ok(exit::OK)
        }
        Command::Ablate {
            axis,
            config,
            quiet,
        } => {
            let axis: AblationAxis = axis.parse()?;
            let seeds = config.seeds.as_deref().map(parse_seeds).transpose()?;
            let (config, sources) = config.resolve()?;
            Ok(completed(commands::ablate(
                &config,
                &sources,
                axis,
                seeds.as_deref(),
                quiet,
            )?))
        }
        Command::Gradcheck {
            seed,
            batch,
            step,
            tolerance,
            sabotage,
            json,
        } => {
            let report = commands::gradcheck(&GradcheckArgs {
                seed,
                batch,
                step,
                tolerance,
                sabotage: sabotage.as_deref(),
            })?;
            print!("{}", report.to_text());
            if let Some(path) = json {
                std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            if report.passed() {
                println!(
                    "gradcheck passed: {} tables below {:e}",
                    report.tables.len(),
                    tolerance
                );
                Ok(exit::OK)
            } else {
                let w = report.worst().expect("a failing table");
                eprintln!(
                    "gradcheck failed: worst table `{}` index {} analytic {:e} numeric {:e} (rel err {:e})",
                    w.table, w.worst_index, w.worst_analytic, w.worst_numeric, w.max_relative_error
                );
                Ok(exit::INCOMPLETE)
            }
        }
        Command::Generate {
            kind,
            out,
            spatial,
            temporal,
            embed_dim,
            n_classes,
            n_samples,
            noise,
            amplitude,
            no_distractors,
            seed,
        } => {
            let kind = match kind {
                Kind::Interaction => GenerateKind::Interaction(InteractionSpec {
                    spatial,
                    temporal,
                    embed_dim,
                    n_classes,
                    n_samples,
                    noise,
                    amplitude: amplitude.unwrap_or(InteractionSpec::default().amplitude),
                    distractors: !no_distractors,
                    seed,
                }),
                Kind::Separable => {
                    if no_distractors {
                        return Err(StampError::Usage(
                            "--no-distractors applies to interaction data only".into(),
                        ));
                    }
                    GenerateKind::Separable(SeparableSpec {
                        spatial,
                        temporal,
                        embed_dim,
                        n_classes,
                        n_samples,
                        noise,
                        amplitude: amplitude.unwrap_or(SeparableSpec::default().amplitude),
                        seed,
                    })
                }
            };
            commands::generate(&kind, &out)?;
            Ok(exit::OK)
        }
        Command::ParamCount {
            spatial,
            temporal,
            embed_dim,
            n_classes,
            tables,
            config,
        } => {
            let (config, _) = config.resolve()?;
            let model = config.model_config([spatial, temporal, embed_dim], n_classes)?;
            print!("{}", commands::param_count_report(&model, tables)?);
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
