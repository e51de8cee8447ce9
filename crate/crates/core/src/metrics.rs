//! Scoring predictions against the exact informer bounds.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BoundDataset, BoundSide};
use crate::error::{Error, Result};
use crate::format::fmt_sig12;
use crate::oracle::{InformerRecord, SubgroupKey};
use crate::scalar::{CompensatedSum, Scalar};
use crate::scm::{ScmKind, N_SUBGROUPS};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scm: ScmKind,
    #[serde(rename = "bound")]
    pub bound_side: BoundSide,
    pub model: String,
    pub activation: Option<String>,
    pub mse: f64,
    pub mae: f64,
    pub n: usize,
    pub bins: usize,
    /// Set when errors are weighted by subgroup probability mass.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub weighted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinnedConfusion {
    pub bins: usize,
    /// `matrix[true_bin][pred_bin]`.
    pub matrix: Vec<Vec<u64>>,
}

impl BinnedConfusion {
    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.matrix.iter().map(|r| r.iter().sum()).collect()
    }

    /// Fraction of pairs on the diagonal.
    pub fn diagonal_fraction(&self) -> f64 {
        let diag: u64 = (0..self.bins).map(|i| self.matrix[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }
}

pub fn truth_value<T: Scalar>(rec: &InformerRecord<T>, side: BoundSide) -> T {
    match side {
        BoundSide::Lower => rec.pns_bounds.lower,
        BoundSide::Upper => rec.pns_bounds.upper,
    }
}

/// Pairs each truth record with its prediction; rejects differing key sets.
fn align<'a, T: Scalar>(
    pred: &[(SubgroupKey, T)],
    truth: &'a [InformerRecord<T>],
) -> Result<Vec<(&'a InformerRecord<T>, T)>> {
    if pred.len() != truth.len() {
        return Err(Error::malformed(format!(
            "{} predictions for {} informer records",
            pred.len(),
            truth.len()
        )));
    }
    let mut slot: Vec<Option<T>> = vec![None; N_SUBGROUPS];
    for &(k, p) in pred {
        if slot[k.index()].replace(p).is_some() {
            return Err(Error::malformed(format!("duplicate prediction for key {k}")));
        }
    }
    truth
        .iter()
        .map(|rec| {
            slot[rec.key.index()]
                .take()
                .map(|p| (rec, p))
                .ok_or_else(|| Error::malformed(format!("no prediction for key {}", rec.key)))
        })
        .collect()
}

fn score_impl<T: Scalar>(
    pred: &[(SubgroupKey, T)],
    truth: &[InformerRecord<T>],
    side: BoundSide,
    weighted: bool,
) -> Result<(f64, f64, usize)> {
    let pairs = align(pred, truth)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("nothing to score".into()));
    }
    let mut se = CompensatedSum::<f64>::new();
    let mut ae = CompensatedSum::<f64>::new();
    let mut mass = CompensatedSum::<f64>::new();
    for (rec, p) in &pairs {
        let e = (p.to_f64_lossy() - truth_value(rec, side).to_f64_lossy()).abs();
        let w = if weighted { rec.weight.to_f64_lossy() } else { 1.0 };
        se.add(w * e * e);
        ae.add(w * e);
        mass.add(w);
    }
    let m = mass.value();
    if !(m > 0.0) {
        return Err(Error::malformed("weights sum to zero"));
    }
    Ok((se.value() / m, ae.value() / m, pairs.len()))
}

/// Unweighted mean squared and absolute error over all keys.
pub fn score<T: Scalar>(
    scm: ScmKind,
    pred: &[(SubgroupKey, T)],
    truth: &[InformerRecord<T>],
    side: BoundSide,
) -> Result<MetricReport> {
    let (mse, mae, n) = score_impl(pred, truth, side, false)?;
    Ok(report(scm, side, mse, mae, n, false))
}

/// Errors weighted by each subgroup's probability mass.
pub fn score_weighted<T: Scalar>(
    scm: ScmKind,
    pred: &[(SubgroupKey, T)],
    truth: &[InformerRecord<T>],
    side: BoundSide,
) -> Result<MetricReport> {
    let (mse, mae, n) = score_impl(pred, truth, side, true)?;
    Ok(report(scm, side, mse, mae, n, true))
}

fn report(scm: ScmKind, side: BoundSide, mse: f64, mae: f64, n: usize, weighted: bool) -> MetricReport {
    MetricReport {
        scm,
        bound_side: side,
        model: String::new(),
        activation: None,
        mse,
        mae,
        n,
        bins: DEFAULT_BINS,
        weighted,
    }
}

impl MetricReport {
    pub fn labeled(mut self, model: &str, activation: Option<String>, bins: usize) -> Self {
        self.model = model.to_string();
        self.activation = activation;
        self.bins = bins;
        self
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn bin_of<T: Scalar>(v: T, bins: usize) -> Result<usize> {
    if !(v >= T::zero() && v <= T::one()) {
        return Err(Error::malformed(format!("value {v} outside [0, 1]")));
    }
    let b = (v * T::lit(bins as f64)).floor().to_usize().unwrap_or(0);
    Ok(b.min(bins - 1))
}

/// `bins x bins` histogram of (true bin, predicted bin) pairs.
pub fn confusion<T: Scalar>(
    pred: &[(SubgroupKey, T)],
    truth: &[InformerRecord<T>],
    side: BoundSide,
    bins: usize,
) -> Result<BinnedConfusion> {
    if bins < 2 {
        return Err(Error::malformed(format!("need at least 2 bins, got {bins}")));
    }
    let mut matrix = vec![vec![0u64; bins]; bins];
    for (rec, p) in align(pred, truth)? {
        matrix[bin_of(truth_value(rec, side), bins)?][bin_of(p, bins)?] += 1;
    }
    Ok(BinnedConfusion { bins, matrix })
}

/// Label of the training key closest in Hamming distance (ties go to the
/// lowest key).
pub fn nearest_subgroup_baseline(train: &BoundDataset, keys: &[SubgroupKey]) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("baseline needs training rows".into()));
    }
    let mut rows: Vec<(u32, f64)> = train.rows.iter().map(|r| (r.key.code(), r.label)).collect();
    rows.sort_by_key(|r| r.0);
    Ok(keys
        .iter()
        .map(|k| {
            let q = k.code();
            let mut best = (u32::MAX, 0.0);
            for &(code, label) in &rows {
                let d = (code ^ q).count_ones();
                if d < best.0 {
                    best = (d, label);
                    if d == 0 {
                        break;
                    }
                }
            }
            best.1
        })
        .collect())
}

/// Writes `key,true,pred` in truth-record order.
pub fn write_scatter_csv<T: Scalar>(
    pred: &[(SubgroupKey, T)],
    truth: &[InformerRecord<T>],
    side: BoundSide,
    path: &Path,
) -> Result<()> {
    let pairs = align(pred, truth)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "key,true,pred")?;
        for (rec, p) in &pairs {
            writeln!(
                w,
                "{},{},{}",
                rec.key.code(),
                fmt_sig12(truth_value(rec, side).to_f64_lossy()),
                fmt_sig12(p.to_f64_lossy())
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Edge label `lo-hi` of each bin.
pub fn bin_labels(bins: usize) -> Vec<String> {
    (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            format!("{}-{}", fmt_sig12(lo), fmt_sig12(hi))
        })
        .collect()
}

/// One row per true bin; the header carries the predicted-bin edges.
pub fn write_confusion_csv(c: &BinnedConfusion, path: &Path) -> Result<()> {
    let labels = bin_labels(c.bins);
    let mut out = format!("true\\pred,{}\n", labels.join(","));
    for (label, row) in labels.iter().zip(&c.matrix) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
