//! End-to-end run: oracle, sampling, dataset build, training and scoring,
//! each stage reading its inputs from the files the previous stage wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    build_training_with, read_training_csv, train_val_split, write_training_csv, BoundDataset, BoundSide,
    CrossingRule,
};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport, DEFAULT_BINS};
use crate::mlp::{predict_all, train, write_training_log, Activation, MlpConfig, MlpModel, TrainReport};
use crate::oracle::{build_informer, read_informer_csv, write_informer_csv, InformerRecord, SubgroupKey};
use crate::sampler::{read_counts_csv, sample_counts, write_counts_csv, RegimeCounts, SimConfig};
use crate::scm::{ScmKind, ScmSpec};

pub const DEFAULT_THRESHOLD: u64 = 1300;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// File name of a per-run artifact; `side` adds the `_lb`/`_ub` suffix.
pub fn artifact(stem: &str, ext: &str, side: Option<BoundSide>) -> String {
    match side {
        Some(s) => format!("{stem}_{}.{ext}", s.tag()),
        None => format!("{stem}.{ext}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scm: ScmKind,
    /// Custom structural parameters; the built-in preset for `scm` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ScmSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub n_obs: u64,
    #[serde(default = "default_scale")]
    pub n_exp: u64,
    #[serde(default = "default_shards")]
    pub shards: usize,
    #[serde(default = "default_treatment_prob")]
    pub treatment_prob: f64,
    #[serde(default = "default_threshold")]
    pub threshold: u64,
    #[serde(default)]
    pub crossing: CrossingRule,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Also score the nearest-subgroup baseline.
    #[serde(default = "default_true")]
    pub baseline: bool,
}

fn default_scale() -> u64 {
    SimConfig::DEFAULT_SCALE
}
fn default_shards() -> usize {
    SimConfig::new(1, 1, 0).shards
}
fn default_treatment_prob() -> f64 {
    SimConfig::new(1, 1, 0).treatment_prob
}
fn default_threshold() -> u64 {
    DEFAULT_THRESHOLD
}
fn default_val_fraction() -> f64 {
    DEFAULT_VAL_FRACTION
}
fn default_activation() -> Activation {
    Activation::Mish
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn new(scm: ScmKind) -> Self {
        Self {
            scm,
            spec: None,
            seed: 0,
            n_obs: default_scale(),
            n_exp: default_scale(),
            shards: default_shards(),
            treatment_prob: default_treatment_prob(),
            threshold: DEFAULT_THRESHOLD,
            crossing: CrossingRule::default(),
            val_fraction: DEFAULT_VAL_FRACTION,
            activation: Activation::Mish,
            epochs: None,
            lr: None,
            batch_size: None,
            bins: DEFAULT_BINS,
            baseline: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::TomlDe(inner) => Error::Parse {
                path: path.into(),
                line: 0,
                msg: inner.message().to_string(),
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn spec(&self) -> ScmSpec {
        self.spec.clone().unwrap_or_else(|| ScmSpec::builtin(self.scm))
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_obs: self.n_obs,
            n_exp: self.n_exp,
            seed: self.seed,
            treatment_prob: self.treatment_prob,
            shards: self.shards,
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        let mut cfg = MlpConfig::for_scm(self.scm, self.activation);
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        cfg.seed = self.seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(spec) = &self.spec {
            spec.validate()?;
            if spec.kind != self.scm {
                return Err(Error::malformed(format!(
                    "spec is a {} model but scm = {}",
                    spec.kind, self.scm
                )));
            }
        }
        self.sim_config().validate()?;
        if self.threshold == 0 {
            return Err(Error::malformed("threshold must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::malformed("val_fraction must lie in (0, 1)"));
        }
        if self.bins < 2 {
            return Err(Error::malformed("bins must be at least 2"));
        }
        if self.epochs == Some(0) {
            return Err(Error::malformed("epochs must be at least 1"));
        }
        self.mlp_config().validate()
    }
}

/// Writes the exact informer table.
pub fn run_oracle(spec: &ScmSpec, out: &Path) -> Result<Vec<InformerRecord<f64>>> {
    let records = build_informer::<f64>(spec)?;
    write_informer_csv(&records, out)?;
    Ok(records)
}

/// Simulates both regimes and writes the count table.
pub fn run_generate(spec: &ScmSpec, sim: &SimConfig, out: &Path) -> Result<(RegimeCounts, RegimeCounts)> {
    let (obs, exp) = sample_counts(spec, sim)?;
    write_counts_csv(&obs, &exp, out)?;
    Ok((obs, exp))
}

/// Reads a count table and writes `train_lb.csv` and `train_ub.csv` into
/// `out_dir`.
pub fn run_build(
    counts: &Path,
    scm: ScmKind,
    threshold: u64,
    rule: CrossingRule,
    out_dir: &Path,
) -> Result<(BoundDataset, BoundDataset)> {
    let (obs, exp) = read_counts_csv(counts)?;
    let (lb, ub) = build_training_with(&obs, &exp, threshold, scm, rule)?;
    create_dir(out_dir)?;
    for ds in [&lb, &ub] {
        write_training_csv(ds, &out_dir.join(artifact("train", "csv", Some(ds.side))))?;
    }
    Ok((lb, ub))
}

/// Splits a training table with `cfg.seed`, trains, and writes the
/// checkpoint and the epoch log.
pub fn run_train(
    training: &Path,
    side: BoundSide,
    scm: ScmKind,
    cfg: &MlpConfig,
    val_fraction: f64,
    model_out: &Path,
    log_out: &Path,
) -> Result<TrainReport<f64>> {
    let ds = read_training_csv(training, side, scm, 0)?;
    let (tr, val) = train_val_split(&ds, val_fraction, cfg.seed)?;
    let report = train::<f64>(cfg, &tr, &val)?;
    report.model.save(model_out)?;
    write_training_log(&report.log, log_out)?;
    Ok(report)
}

/// Where `run_eval` writes its three outputs.
#[derive(Debug, Clone)]
pub struct EvalOutputs {
    pub predictions: PathBuf,
    pub confusion: PathBuf,
    pub metrics: PathBuf,
}

impl EvalOutputs {
    pub fn in_dir(dir: &Path, side: BoundSide) -> Self {
        Self {
            predictions: dir.join(artifact("predictions", "csv", Some(side))),
            confusion: dir.join(artifact("confusion", "csv", Some(side))),
            metrics: dir.join(artifact("metrics", "json", Some(side))),
        }
    }
}

fn keyed(values: Vec<f64>) -> Vec<(SubgroupKey, f64)> {
    SubgroupKey::all().zip(values).collect()
}

/// Scores a saved model against a saved informer table.
pub fn run_eval(
    model: &Path,
    informer: &Path,
    side: BoundSide,
    scm: ScmKind,
    bins: usize,
    out: &EvalOutputs,
) -> Result<MetricReport> {
    let model = MlpModel::<f64>::load(model)?;
    let truth = read_informer_csv(informer)?;
    let pred = keyed(predict_all(&model));
    let report = metrics::score(scm, &pred, &truth, side)?.labeled("mlp", Some(model.activation.to_string()), bins);
    metrics::write_scatter_csv(&pred, &truth, side, &out.predictions)?;
    metrics::write_confusion_csv(&metrics::confusion(&pred, &truth, side, bins)?, &out.confusion)?;
    report.write_json(&out.metrics)?;
    Ok(report)
}

/// Scores the nearest-subgroup baseline built from a training table.
pub fn run_baseline_eval(
    training: &Path,
    informer: &Path,
    side: BoundSide,
    scm: ScmKind,
    bins: usize,
    metrics_out: &Path,
) -> Result<MetricReport> {
    let ds = read_training_csv(training, side, scm, 0)?;
    let truth = read_informer_csv(informer)?;
    let keys: Vec<SubgroupKey> = SubgroupKey::all().collect();
    let pred = keyed(metrics::nearest_subgroup_baseline(&ds, &keys)?);
    let report = metrics::score(scm, &pred, &truth, side)?.labeled("nearest-subgroup", None, bins);
    report.write_json(metrics_out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub seed: u64,
    pub scm: ScmKind,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Artifact name to file record, relative to the run directory.
    pub outputs: BTreeMap<String, OutputFile>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.config.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Names of outputs whose file in `dir` no longer matches its digest.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for (name, f) in &self.outputs {
            let path = dir.join(&f.path);
            if !path.exists() || sha256_file(&path)? != f.sha256 {
                stale.push(name.clone());
            }
        }
        Ok(stale)
    }
}

/// Runs every stage into `out_dir` and writes `manifest.json`. `progress`
/// receives one line per completed stage.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path, mut progress: impl FnMut(&str)) -> Result<RunManifest> {
    cfg.validate()?;
    let started_unix = unix_now();
    create_dir(out_dir)?;
    let spec = cfg.spec();
    let mut files: Vec<String> = Vec::new();
    let record = |name: String, files: &mut Vec<String>| files.push(name);

    let informer = out_dir.join(artifact("informer", "csv", None));
    run_oracle(&spec, &informer)?;
    record(artifact("informer", "csv", None), &mut files);
    progress("oracle: informer.csv");

    let counts = out_dir.join(artifact("counts", "csv", None));
    run_generate(&spec, &cfg.sim_config(), &counts)?;
    record(artifact("counts", "csv", None), &mut files);
    progress("generate: counts.csv");

    let (lb, ub) = run_build(&counts, cfg.scm, cfg.threshold, cfg.crossing, out_dir)?;
    progress(&format!("build: {} lower-bound rows, {} upper-bound rows", lb.len(), ub.len()));

    let mlp = cfg.mlp_config();
    for side in BoundSide::BOTH {
        let training = artifact("train", "csv", Some(side));
        record(training.clone(), &mut files);
        let model = artifact("model", "json", Some(side));
        let log = artifact("train_log", "csv", Some(side));
        let report = run_train(
            &out_dir.join(&training),
            side,
            cfg.scm,
            &mlp,
            cfg.val_fraction,
            &out_dir.join(&model),
            &out_dir.join(&log),
        )?;
        record(model.clone(), &mut files);
        record(log, &mut files);
        progress(&format!(
            "train {}: best epoch {} (validation loss {:.3e})",
            side.tag(),
            report.best_epoch,
            report.best_val_loss
        ));

        let outs = EvalOutputs::in_dir(out_dir, side);
        let m = run_eval(&out_dir.join(&model), &informer, side, cfg.scm, cfg.bins, &outs)?;
        for name in ["predictions", "confusion"] {
            record(artifact(name, "csv", Some(side)), &mut files);
        }
        record(artifact("metrics", "json", Some(side)), &mut files);
        progress(&format!("eval {}: mse {:.4e} mae {:.4e}", side.tag(), m.mse, m.mae));

        if cfg.baseline {
            let name = artifact("metrics_baseline", "json", Some(side));
            let b = run_baseline_eval(
                &out_dir.join(&training),
                &informer,
                side,
                cfg.scm,
                cfg.bins,
                &out_dir.join(&name),
            )?;
            record(name, &mut files);
            progress(&format!("baseline {}: mae {:.4e}", side.tag(), b.mae));
        }
    }

    let mut outputs = BTreeMap::new();
    for name in files {
        let path = out_dir.join(&name);
        let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        let file = OutputFile {
            sha256: sha256_file(&path)?,
            path: name.clone(),
            bytes,
        };
        outputs.insert(name, file);
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        seed: cfg.seed,
        scm: cfg.scm,
        started_unix,
        finished_unix: unix_now(),
        outputs,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
