//! Exact causal quantities by enumerating exogenous noise, per unit and per
//! observed subgroup. The subgroup records form the informer (ground truth)
//! table the learned predictors are scored against.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{pns_bounds, BoundPair, CausalDistribution};
use crate::error::{Error, Result};
use crate::format::{fmt_sig12, parse_field};
use crate::scalar::{CompensatedSum, Scalar};
use crate::scm::{
    FullFeatureVector, NoiseVars, ScmSpec, N_COMPLETIONS, N_OBSERVED, N_SUBGROUPS,
};

/// Observed covariates `z1..z15` of a subgroup; bit `i` holds `z_{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubgroupKey(u16);

impl SubgroupKey {
    pub fn new(code: u32) -> Result<Self> {
        if code as usize >= N_SUBGROUPS {
            return Err(Error::malformed(format!(
                "subgroup key {code} outside [0, {}]",
                N_SUBGROUPS - 1
            )));
        }
        Ok(Self(code as u16))
    }

    /// All `2^15` keys in ascending order.
    pub fn all() -> impl ExactSizeIterator<Item = SubgroupKey> + Clone {
        (0..N_SUBGROUPS as u16).map(SubgroupKey)
    }

    #[inline]
    pub fn code(self) -> u32 {
        self.0 as u32
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn get(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    /// The 0/1 feature values `z1..z15`.
    pub fn features(self) -> [u8; N_OBSERVED] {
        std::array::from_fn(|i| self.get(i) as u8)
    }

    pub fn from_features(z: &[u8]) -> Result<Self> {
        if z.len() != N_OBSERVED {
            return Err(Error::malformed(format!(
                "expected {N_OBSERVED} features, got {}",
                z.len()
            )));
        }
        let mut code = 0u32;
        for (i, &v) in z.iter().enumerate() {
            match v {
                0 => {}
                1 => code |= 1 << i,
                _ => return Err(Error::malformed(format!("z{} = {v} is not binary", i + 1))),
            }
        }
        Self::new(code)
    }

    /// Full feature vector with hidden bits `z16..z20 = hidden`.
    #[inline]
    pub fn complete(self, hidden: u32) -> FullFeatureVector {
        FullFeatureVector::from_bits_unchecked(self.code() | (hidden << N_OBSERVED))
    }

    pub fn hamming(self, other: SubgroupKey) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

impl fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Exact ground truth for one subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformerRecord<T> {
    pub key: SubgroupKey,
    pub dist: CausalDistribution<T>,
    pub pns_point: T,
    pub pns_bounds: BoundPair<T>,
    /// Population mass `P(c)` of the subgroup.
    pub weight: T,
}

/// Exact quantities for one full feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitTruth<T> {
    pub z: FullFeatureVector,
    /// Conditional mass `P(s_j | c)` of this completion within its subgroup.
    pub weight: T,
    pub dist: CausalDistribution<T>,
    pub pns_point: T,
}

fn mass<T: Scalar>(spec: &ScmSpec, u: crate::scm::Exogenous, vars: NoiseVars) -> T {
    T::lit(spec.noise_mass(u, vars))
}

/// `P(Y_{x'} = 0, Y_x = 1 | z)`.
pub fn pns_point<T: Scalar>(spec: &ScmSpec, z: FullFeatureVector) -> T {
    let scores = spec.unit_scores(z);
    let mut acc = CompensatedSum::new();
    for u in spec.noise_assignments(NoiseVars::RESPONSE) {
        if spec.respond(&scores, true, u) && !spec.respond(&scores, false, u) {
            acc.add(mass::<T>(spec, u, NoiseVars::RESPONSE));
        }
    }
    acc.value()
}

/// `P(Y = 1 | do(X = x), z)`.
pub fn interventional_point<T: Scalar>(spec: &ScmSpec, z: FullFeatureVector, x: bool) -> T {
    let scores = spec.unit_scores(z);
    let mut acc = CompensatedSum::new();
    for u in spec.noise_assignments(NoiseVars::RESPONSE) {
        if spec.respond(&scores, x, u) {
            acc.add(mass::<T>(spec, u, NoiseVars::RESPONSE));
        }
    }
    acc.value()
}

/// `P(X = x, Y = y | z)` in `(xy, xy', x'y, x'y')` order.
pub fn observational_joint<T: Scalar>(spec: &ScmSpec, z: FullFeatureVector) -> [T; 4] {
    let scores = spec.unit_scores(z);
    let mut cells = [CompensatedSum::new(); 4];
    for u in spec.noise_assignments(NoiseVars::ALL) {
        let (x, y) = spec.observe(&scores, u);
        cells[cell_index(x, y)].add(mass::<T>(spec, u, NoiseVars::ALL));
    }
    cells.map(|c| c.value())
}

/// Position of `(x, y)` in the `(xy, xy', x'y, x'y')` cell order.
#[inline]
pub fn cell_index(x: bool, y: bool) -> usize {
    (!x as usize) * 2 + (!y as usize)
}

pub fn unit_distribution<T: Scalar>(spec: &ScmSpec, z: FullFeatureVector) -> CausalDistribution<T> {
    let [p_xy, p_xyp, p_xpy, p_xpyp] = observational_joint(spec, z);
    CausalDistribution {
        p_yx: interventional_point(spec, z, true),
        p_yxp: interventional_point(spec, z, false),
        p_xy,
        p_xyp,
        p_xpy,
        p_xpyp,
    }
}

/// The 32 completions of `key` with their within-subgroup masses, which are
/// products of the hidden-covariate priors.
pub fn hidden_completions<T: Scalar>(spec: &ScmSpec, key: SubgroupKey) -> Vec<(FullFeatureVector, T)> {
    (0..N_COMPLETIONS as u32)
        .map(|hidden| {
            let z = key.complete(hidden);
            let mut w = 1.0;
            for i in N_OBSERVED..crate::scm::N_FEATURES {
                w *= spec.feature_mass(i, z.get(i));
            }
            (z, T::lit(w))
        })
        .collect()
}

/// `P(c)`: product of the observed-covariate priors.
pub fn subgroup_weight<T: Scalar>(spec: &ScmSpec, key: SubgroupKey) -> T {
    let mut w = 1.0;
    for i in 0..N_OBSERVED {
        w *= spec.feature_mass(i, key.get(i));
    }
    T::lit(w)
}

/// Per-completion exact quantities, so callers can aggregate them other
/// ways (e.g. averaging per-completion bounds).
pub fn completion_truths<T: Scalar>(spec: &ScmSpec, key: SubgroupKey) -> Vec<UnitTruth<T>> {
    hidden_completions::<T>(spec, key)
        .into_iter()
        .map(|(z, weight)| UnitTruth {
            z,
            weight,
            dist: unit_distribution(spec, z),
            pns_point: pns_point(spec, z),
        })
        .collect()
}

/// Subgroup-level truth: completion-weighted averages of the unit
/// quantities, with PNS bounds taken on the aggregated distribution.
pub fn subgroup_truth<T: Scalar>(spec: &ScmSpec, key: SubgroupKey) -> Result<InformerRecord<T>> {
    let mut acc = [CompensatedSum::<T>::new(); 7];
    for unit in completion_truths::<T>(spec, key) {
        let d = unit.dist;
        let vals = [d.p_yx, d.p_yxp, d.p_xy, d.p_xyp, d.p_xpy, d.p_xpyp, unit.pns_point];
        for (a, v) in acc.iter_mut().zip(vals) {
            a.add(unit.weight * v);
        }
    }
    let [p_yx, p_yxp, p_xy, p_xyp, p_xpy, p_xpyp, pns] = acc.map(|a| a.value());
    let dist = CausalDistribution {
        p_yx,
        p_yxp,
        p_xy,
        p_xyp,
        p_xpy,
        p_xpyp,
    };
    Ok(InformerRecord {
        key,
        dist,
        pns_point: pns,
        pns_bounds: pns_bounds(&dist)?,
        weight: subgroup_weight(spec, key),
    })
}

/// Ground truth for every subgroup, in ascending key order.
pub fn build_informer<T: Scalar>(spec: &ScmSpec) -> Result<Vec<InformerRecord<T>>> {
    spec.validate()?;
    let keys: Vec<SubgroupKey> = SubgroupKey::all().collect();
    keys.par_iter().map(|&k| subgroup_truth(spec, k)).collect()
}

const INFORMER_COLUMNS: [&str; 10] = [
    "p_yx", "p_yxp", "p_xy", "p_xyp", "p_xpy", "p_xpyp", "pns_point", "pns_lb", "pns_ub", "weight",
];

fn informer_header() -> String {
    let mut h = vec!["key".to_string()];
    h.extend((1..=N_OBSERVED).map(|i| format!("z{i}")));
    h.extend(INFORMER_COLUMNS.iter().map(|s| s.to_string()));
    h.join(",")
}

pub fn write_informer_csv<T: Scalar>(records: &[InformerRecord<T>], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", informer_header())?;
        for r in records {
            write!(w, "{}", r.key)?;
            for z in r.key.features() {
                write!(w, ",{z}")?;
            }
            let d = &r.dist;
            for v in [
                d.p_yx,
                d.p_yxp,
                d.p_xy,
                d.p_xyp,
                d.p_xpy,
                d.p_xpyp,
                r.pns_point,
                r.pns_bounds.lower,
                r.pns_bounds.upper,
                r.weight,
            ] {
                write!(w, ",{}", fmt_sig12(v.to_f64_lossy()))?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads an informer table written by [`write_informer_csv`]. Values carry
/// the file's 12-significant-digit precision.
pub fn read_informer_csv(path: &Path) -> Result<Vec<InformerRecord<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if header.trim() != informer_header() {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: "unexpected informer header".into(),
        });
    }
    let mut out = Vec::with_capacity(N_SUBGROUPS);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + N_OBSERVED + INFORMER_COLUMNS.len() {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("expected {} fields", 1 + N_OBSERVED + INFORMER_COLUMNS.len()),
            });
        }
        let key: u32 = parse_field(path, lineno, fields[0])?;
        let key = SubgroupKey::new(key)?;
        let v: Vec<f64> = fields[1 + N_OBSERVED..]
            .iter()
            .map(|f| parse_field(path, lineno, f))
            .collect::<Result<_>>()?;
        out.push(InformerRecord {
            key,
            dist: CausalDistribution {
                p_yx: v[0],
                p_yxp: v[1],
                p_xy: v[2],
                p_xyp: v[3],
                p_xpy: v[4],
                p_xpyp: v[5],
            },
            pns_point: v[6],
            pns_bounds: BoundPair {
                lower: v[7],
                upper: v[8],
                valid: v[7] <= v[8],
            },
            weight: v[9],
        });
    }
    Ok(out)
}
