//! Training tables: estimated PNS bounds of every subgroup that has enough
//! samples in both regimes, one table per bound side.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::bounds::pns_bounds;
use crate::error::{Error, Result};
use crate::format::parse_field;
use crate::oracle::SubgroupKey;
use crate::sampler::{estimate_distribution, RegimeCounts};
use crate::scm::{ScmKind, N_OBSERVED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundSide {
    #[serde(rename = "lb")]
    Lower,
    #[serde(rename = "ub")]
    Upper,
}

impl BoundSide {
    pub const BOTH: [BoundSide; 2] = [BoundSide::Lower, BoundSide::Upper];

    pub fn tag(self) -> &'static str {
        match self {
            BoundSide::Lower => "lb",
            BoundSide::Upper => "ub",
        }
    }
}

impl fmt::Display for BoundSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BoundSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lb" | "lower" => Ok(BoundSide::Lower),
            "ub" | "upper" => Ok(BoundSide::Upper),
            other => Err(Error::malformed(format!("unknown bound side `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledExample {
    pub key: SubgroupKey,
    pub label: f64,
}

impl LabeledExample {
    pub fn features(&self) -> [u8; N_OBSERVED] {
        self.key.features()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundDataset {
    pub side: BoundSide,
    pub rows: Vec<LabeledExample>,
    pub threshold: u64,
    pub scm: ScmKind,
}

impl BoundDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn with_rows(&self, rows: Vec<LabeledExample>) -> Self {
        Self {
            rows,
            ..self.clone()
        }
    }
}

/// How rows whose estimated bounds cross (`lower > upper`) are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingRule {
    /// Drop the subgroup from both tables.
    #[default]
    DropBoth,
    /// Keep the (clamped) values in both tables.
    Keep,
}

/// Builds the lower- and upper-bound tables from subgroups with at least
/// `threshold` samples in each regime, in ascending key order.
pub fn build_training(
    obs: &RegimeCounts,
    exp: &RegimeCounts,
    threshold: u64,
    scm: ScmKind,
) -> Result<(BoundDataset, BoundDataset)> {
    build_training_with(obs, exp, threshold, scm, CrossingRule::default())
}

pub fn build_training_with(
    obs: &RegimeCounts,
    exp: &RegimeCounts,
    threshold: u64,
    scm: ScmKind,
    rule: CrossingRule,
) -> Result<(BoundDataset, BoundDataset)> {
    if threshold == 0 {
        return Err(Error::malformed("threshold must be at least 1"));
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for key in SubgroupKey::all() {
        if obs.subgroup_total(key) < threshold || exp.subgroup_total(key) < threshold {
            continue;
        }
        let dist = match estimate_distribution::<f64>(obs, exp, key) {
            Ok(d) => d,
            // An arm can still be empty when the threshold is tiny.
            Err(Error::InsufficientData(_)) => continue,
            Err(e) => return Err(e),
        };
        let b = pns_bounds(&dist)?;
        if !b.valid && rule == CrossingRule::DropBoth {
            continue;
        }
        lower.push(LabeledExample { key, label: b.lower });
        upper.push(LabeledExample { key, label: b.upper });
    }
    if lower.is_empty() && upper.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no subgroup has {threshold} samples in both regimes"
        )));
    }
    let make = |side, rows| BoundDataset {
        side,
        rows,
        threshold,
        scm,
    };
    Ok((make(BoundSide::Lower, lower), make(BoundSide::Upper, upper)))
}

/// Seeded shuffle into `(train, validation)`; the validation part holds
/// `round(len * val_fraction)` rows, clamped so both parts are nonempty.
pub fn train_val_split(ds: &BoundDataset, val_fraction: f64, seed: u64) -> Result<(BoundDataset, BoundDataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::malformed(format!(
            "val_fraction = {val_fraction} must lie in (0, 1)"
        )));
    }
    if ds.len() < 2 {
        return Err(Error::malformed(format!(
            "cannot split a dataset of {} rows",
            ds.len()
        )));
    }
    let n_val = ((ds.len() as f64 * val_fraction).round() as usize).clamp(1, ds.len() - 1);
    let mut rows = ds.rows.clone();
    rows.shuffle(&mut Xoshiro256StarStar::seed_from_u64(seed));
    let val = rows.split_off(rows.len() - n_val);
    Ok((ds.with_rows(rows), ds.with_rows(val)))
}

fn header() -> String {
    let mut h = vec!["key".to_string()];
    h.extend((1..=N_OBSERVED).map(|i| format!("z{i}")));
    h.push("label".into());
    h.join(",")
}

/// Writes `key,z1..z15,label` with labels at full round-trip precision.
pub fn write_training_csv(ds: &BoundDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", header())?;
        for r in &ds.rows {
            write!(w, "{}", r.key)?;
            for z in r.features() {
                write!(w, ",{z}")?;
            }
            writeln!(w, ",{}", r.label)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a training table; side, threshold and model kind are not stored
/// in the file and are supplied by the caller.
pub fn read_training_csv(path: &Path, side: BoundSide, scm: ScmKind, threshold: u64) -> Result<BoundDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut seen = vec![false; crate::scm::N_SUBGROUPS];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: lineno,
            msg,
        };
        if i == 0 {
            if line.trim() != header() {
                return Err(parse_err("unexpected training header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != N_OBSERVED + 2 {
            return Err(parse_err(format!("expected {} fields", N_OBSERVED + 2)));
        }
        let key = SubgroupKey::new(parse_field(path, lineno, f[0])?)?;
        let feats: Vec<u8> = f[1..=N_OBSERVED]
            .iter()
            .map(|s| parse_field(path, lineno, s))
            .collect::<Result<_>>()?;
        if SubgroupKey::from_features(&feats)? != key {
            return Err(parse_err(format!("features do not match key {key}")));
        }
        let label: f64 = parse_field(path, lineno, f[N_OBSERVED + 1])?;
        if !(0.0..=1.0).contains(&label) {
            return Err(parse_err(format!("label {label} outside [0, 1]")));
        }
        if std::mem::replace(&mut seen[key.index()], true) {
            return Err(parse_err(format!("duplicate key {key}")));
        }
        rows.push(LabeledExample { key, label });
    }
    Ok(BoundDataset {
        side,
        rows,
        threshold,
        scm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample_counts, Regime, SimConfig};
    use crate::scm::ScmSpec;

    fn dataset(n: usize) -> BoundDataset {
        BoundDataset {
            side: BoundSide::Lower,
            rows: (0..n)
                .map(|i| LabeledExample {
                    key: SubgroupKey::new(i as u32).unwrap(),
                    label: i as f64 / n as f64,
                })
                .collect(),
            threshold: 1,
            scm: ScmKind::Confounder,
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = dataset(2000);
        let (tr, va) = train_val_split(&ds, 0.1, 4).unwrap();
        assert_eq!((tr.len(), va.len()), (1800, 200));
        let (tr2, va2) = train_val_split(&ds, 0.1, 4).unwrap();
        assert_eq!((tr.rows, va.rows), (tr2.rows, va2.rows));
    }

    #[test]
    fn split_is_disjoint_cover() {
        let ds = dataset(57);
        let (tr, va) = train_val_split(&ds, 0.25, 1).unwrap();
        let mut keys: Vec<u32> = tr.rows.iter().chain(&va.rows).map(|r| r.key.code()).collect();
        keys.sort();
        assert_eq!(keys, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        assert!(train_val_split(&dataset(10), 0.0, 1).is_err());
        assert!(train_val_split(&dataset(10), 1.0, 1).is_err());
        assert!(train_val_split(&dataset(1), 0.5, 1).is_err());
    }

    #[test]
    fn absurd_threshold_is_empty() {
        let spec = ScmSpec::builtin(ScmKind::Confounder);
        let (obs, exp) = sample_counts(&spec, &SimConfig::new(10_000, 10_000, 1)).unwrap();
        assert!(matches!(
            build_training(&obs, &exp, 1_000_000, ScmKind::Confounder),
            Err(Error::EmptyDataset(_))
        ));
        assert!(build_training(&obs, &exp, 0, ScmKind::Confounder).is_err());
    }

    #[test]
    fn labels_come_from_bounds_of_estimates() {
        let mut obs = RegimeCounts::empty(Regime::Observational);
        let mut exp = RegimeCounts::empty(Regime::Experimental);
        obs.counts[3] = [30, 20, 10, 40];
        exp.counts[3] = [35, 15, 10, 40];
        obs.counts[4] = [1, 1, 1, 1];
        exp.counts[4] = [50, 50, 50, 50];
        let (lb, ub) = build_training(&obs, &exp, 50, ScmKind::Confounder).unwrap();
        assert_eq!(lb.len(), 1);
        // p_yx = 0.7, p_yxp = 0.2, joint (0.3, 0.2, 0.1, 0.4) -> (0.5, 0.7)
        assert!((lb.rows[0].label - 0.5).abs() < 1e-12);
        assert!((ub.rows[0].label - 0.7).abs() < 1e-12);
    }

    #[test]
    fn crossing_rows_follow_rule() {
        let mut obs = RegimeCounts::empty(Regime::Observational);
        let mut exp = RegimeCounts::empty(Regime::Experimental);
        // p_yx = p_yxp = 0.9 against a joint where treated rarely show y.
        obs.counts[0] = [5, 45, 0, 50];
        exp.counts[0] = [90, 10, 90, 10];
        obs.counts[1] = [30, 20, 10, 40];
        exp.counts[1] = [35, 15, 10, 40];
        let (lb, _) = build_training(&obs, &exp, 10, ScmKind::Confounder).unwrap();
        assert_eq!(lb.rows.iter().map(|r| r.key.code()).collect::<Vec<_>>(), vec![1]);
        let (lb, ub) = build_training_with(&obs, &exp, 10, ScmKind::Confounder, CrossingRule::Keep).unwrap();
        assert_eq!((lb.len(), ub.len()), (2, 2));
    }

    #[test]
    fn csv_round_trip_preserves_labels_exactly() {
        let ds = BoundDataset {
            rows: vec![
                LabeledExample {
                    key: SubgroupKey::new(123).unwrap(),
                    label: 1.0 / 3.0,
                },
                LabeledExample {
                    key: SubgroupKey::new(32767).unwrap(),
                    label: 0.1 + 0.2,
                },
            ],
            ..dataset(0)
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_training_csv(&ds, &path).unwrap();
        let back = read_training_csv(&path, ds.side, ds.scm, ds.threshold).unwrap();
        assert_eq!(back, ds);
    }
}
