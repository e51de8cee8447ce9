use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pns_core::dataset::{BoundSide, CrossingRule};
use pns_core::pipeline::{self, artifact, EvalOutputs, PipelineConfig, RunManifest, MANIFEST_FILE};
use pns_core::{Activation, ScmKind, ScmSpec, SimConfig};

#[derive(Parser)]
#[command(name = "pnsml", version, about = "Exact and learned bounds on the probability of necessity and sufficiency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the exact per-subgroup informer table.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Output CSV path.
        #[arg(long, default_value = "informer.csv")]
        out: PathBuf,
    },
    /// Simulate observational and experimental samples into a count table.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "counts.csv")]
        out: PathBuf,
    },
    /// Build lower- and upper-bound training tables from a count table.
    Build {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        threshold: Option<u64>,
        /// Keep subgroups whose estimated bounds cross instead of dropping them.
        #[arg(long)]
        keep_crossing: bool,
        /// Output directory for train_lb.csv and train_ub.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train a regressor on one training table.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Training CSV written by `build`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_side)]
        bound: BoundSide,
        /// Checkpoint path; the epoch log goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model (or the nearest-subgroup baseline) against the informer table.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "baseline")]
        model: Option<PathBuf>,
        /// Score the nearest-subgroup baseline built from this training CSV.
        #[arg(long, conflicts_with = "model")]
        baseline: Option<PathBuf>,
        #[arg(long)]
        informer: PathBuf,
        #[arg(long, value_parser = parse_side)]
        bound: BoundSide,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run every stage and write a manifest with output digests.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        threshold: Option<u64>,
        /// Rerun with the configuration recorded in an earlier manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Check the files of a run directory against its manifest.
    Verify {
        /// Run directory or manifest path.
        path: PathBuf,
    },
    /// Print the structural parameters of a preset as TOML.
    Spec {
        #[arg(long)]
        scm: ScmKind,
    },
}

#[derive(Args)]
struct Common {
    /// confounder, covariate, direct or mediator.
    #[arg(long)]
    scm: Option<ScmKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline TOML; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TOML file with custom structural parameters.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    n_obs: Option<u64>,
    #[arg(long)]
    n_exp: Option<u64>,
    /// 50M observational and 50M experimental samples.
    #[arg(long, conflicts_with_all = ["n_obs", "n_exp"])]
    full_scale: bool,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    treatment_prob: Option<f64>,
}

#[derive(Args)]
struct ModelArgs {
    /// relu, leakyrelu, leakyrelu(<slope>) or mish.
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

fn parse_side(s: &str) -> Result<BoundSide, String> {
    s.parse().map_err(|e: pns_core::Error| e.to_string())
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let spec = match &self.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Some(ScmSpec::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?)
            }
            None => None,
        };
        let mut cfg = match (&self.config, self.scm, &spec) {
            (Some(path), _, _) => PipelineConfig::load(path)?,
            (None, Some(scm), _) => PipelineConfig::new(scm),
            (None, None, Some(spec)) => PipelineConfig::new(spec.kind),
            (None, None, None) => bail!("one of --scm, --config or --spec is required"),
        };
        if let Some(scm) = self.scm {
            if cfg.spec.as_ref().is_some_and(|s| s.kind != scm) {
                cfg.spec = None;
            }
            cfg.scm = scm;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(spec) = spec {
            if self.scm.is_none() {
                cfg.scm = spec.kind;
            }
            cfg.spec = Some(spec);
        }
        Ok(cfg)
    }
}

impl SimArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if self.full_scale {
            cfg.n_obs = SimConfig::FULL_SCALE;
            cfg.n_exp = SimConfig::FULL_SCALE;
        }
        if let Some(n) = self.n_obs {
            cfg.n_obs = n;
        }
        if let Some(n) = self.n_exp {
            cfg.n_exp = n;
        }
        if let Some(s) = self.shards {
            cfg.shards = s;
        }
        if let Some(p) = self.treatment_prob {
            cfg.treatment_prob = p;
        }
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(a) = self.activation {
            cfg.activation = a;
        }
        if self.epochs.is_some() {
            cfg.epochs = self.epochs;
        }
        if self.lr.is_some() {
            cfg.lr = self.lr;
        }
        if self.batch_size.is_some() {
            cfg.batch_size = self.batch_size;
        }
        if let Some(v) = self.val_fraction {
            cfg.val_fraction = v;
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Oracle { common, out } => {
            let cfg = common.config()?;
            cfg.validate()?;
            ensure_parent(&out)?;
            let t = Instant::now();
            let records = pipeline::run_oracle(&cfg.spec(), &out)?;
            eprintln!("wrote {} records to {} in {:.1?}", records.len(), out.display(), t.elapsed());
        }
        Command::Generate { common, sim, out } => {
            let mut cfg = common.config()?;
            sim.apply(&mut cfg);
            cfg.validate()?;
            ensure_parent(&out)?;
            let t = Instant::now();
            let (obs, exp) = pipeline::run_generate(&cfg.spec(), &cfg.sim_config(), &out)?;
            eprintln!(
                "wrote {} observational and {} experimental samples to {} in {:.1?}",
                obs.total,
                exp.total,
                out.display(),
                t.elapsed()
            );
        }
        Command::Build {
            common,
            counts,
            threshold,
            keep_crossing,
            out,
        } => {
            let mut cfg = common.config()?;
            if let Some(th) = threshold {
                cfg.threshold = th;
            }
            if keep_crossing {
                cfg.crossing = CrossingRule::Keep;
            }
            cfg.validate()?;
            let (lb, ub) = pipeline::run_build(&counts, cfg.scm, cfg.threshold, cfg.crossing, &out)?;
            eprintln!("wrote {} lower-bound and {} upper-bound rows to {}", lb.len(), ub.len(), out.display());
        }
        Command::Train {
            common,
            model,
            data,
            bound,
            out,
        } => {
            let mut cfg = common.config()?;
            model.apply(&mut cfg);
            cfg.validate()?;
            ensure_parent(&out)?;
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            let log = out.with_file_name(format!("{}.log.csv", stem));
            let log = if stem == format!("model_{}", bound.tag()) {
                out.with_file_name(artifact("train_log", "csv", Some(bound)))
            } else {
                log
            };
            let t = Instant::now();
            let report = pipeline::run_train(&data, bound, cfg.scm, &cfg.mlp_config(), cfg.val_fraction, &out, &log)?;
            eprintln!(
                "best epoch {} (validation loss {:.4e}) in {:.1?}; model {}, log {}",
                report.best_epoch,
                report.best_val_loss,
                t.elapsed(),
                out.display(),
                log.display()
            );
        }
        Command::Eval {
            common,
            model,
            baseline,
            informer,
            bound,
            bins,
            out,
        } => {
            let mut cfg = common.config()?;
            if let Some(b) = bins {
                cfg.bins = b;
            }
            cfg.validate()?;
            ensure_dir(&out)?;
            let report = match (model, baseline) {
                (Some(model), _) => {
                    pipeline::run_eval(&model, &informer, bound, cfg.scm, cfg.bins, &EvalOutputs::in_dir(&out, bound))?
                }
                (None, Some(train)) => pipeline::run_baseline_eval(
                    &train,
                    &informer,
                    bound,
                    cfg.scm,
                    cfg.bins,
                    &out.join(artifact("metrics_baseline", "json", Some(bound))),
                )?,
                (None, None) => bail!("--model or --baseline is required"),
            };
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Pipeline {
            common,
            sim,
            model,
            threshold,
            manifest,
            out,
        } => {
            let mut cfg = match &manifest {
                Some(path) => {
                    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.clone() };
                    RunManifest::load(&path)?.config
                }
                None => common.config()?,
            };
            if manifest.is_some() {
                if let Some(seed) = common.seed {
                    cfg.seed = seed;
                }
            }
            sim.apply(&mut cfg);
            model.apply(&mut cfg);
            if let Some(th) = threshold {
                cfg.threshold = th;
            }
            let t = Instant::now();
            let m = pipeline::run_pipeline(&cfg, &out, |line| eprintln!("[{:>7.1?}] {line}", t.elapsed()))?;
            eprintln!("wrote {} outputs and {}", m.outputs.len(), out.join(MANIFEST_FILE).display());
        }
        Command::Verify { path } => {
            let (dir, file) = if path.is_dir() {
                (path.clone(), path.join(MANIFEST_FILE))
            } else {
                (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.clone())
            };
            let m = RunManifest::load(&file)?;
            let stale = m.verify(&dir)?;
            if !stale.is_empty() {
                bail!("digest mismatch: {}", stale.join(", "));
            }
            println!("{} outputs match {}", m.outputs.len(), file.display());
        }
        Command::Spec { scm } => {
            print!("{}", ScmSpec::builtin(scm).to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
