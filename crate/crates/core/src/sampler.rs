//! Monte Carlo generation of observational and experimental data, kept as
//! per-subgroup `(X, Y)` count tables instead of raw rows.
//!
//! Random numbers come from xoshiro256** seeded through SplitMix64
//! (`seed_from_u64`). Shard `s` of the observational regime uses the base
//! generator advanced by `s` jumps (2^128 steps each); the experimental
//! regime first applies one long jump (2^192 steps). Shards are merged by
//! cell-wise addition, so results depend on the seed and the shard count
//! but not on how many threads run the shards.
//!
//! Per sample the draw order is `U_{Z_1}..U_{Z_20}, U_X, [U_M], U_Y` and,
//! in the experimental regime, then the randomized treatment. A Bernoulli
//! draw is `u < p` with `u` built from the top 53 bits of one output.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::CausalDistribution;
use crate::error::{Error, Result};
use crate::format::parse_field;
use crate::oracle::{cell_index, SubgroupKey};
use crate::scalar::Scalar;
use crate::scm::{Exogenous, FullFeatureVector, ScmSpec, N_FEATURES, N_SUBGROUPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Observational,
    Experimental,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Observational => "observational",
            Regime::Experimental => "experimental",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observational" => Ok(Regime::Observational),
            "experimental" => Ok(Regime::Experimental),
            other => Err(Error::malformed(format!("unknown regime `{other}`"))),
        }
    }
}

/// `(X, Y)` cell counts per subgroup, cells in `(xy, xy', x'y, x'y')` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegimeCounts {
    pub regime: Regime,
    pub counts: Vec<[u64; 4]>,
    pub total: u64,
}

impl RegimeCounts {
    pub fn empty(regime: Regime) -> Self {
        Self {
            regime,
            counts: vec![[0; 4]; N_SUBGROUPS],
            total: 0,
        }
    }

    pub fn cells(&self, key: SubgroupKey) -> [u64; 4] {
        self.counts[key.index()]
    }

    pub fn subgroup_total(&self, key: SubgroupKey) -> u64 {
        self.cells(key).iter().sum()
    }

    fn merge(&mut self, other: &RegimeCounts) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.total += other.total;
    }

    fn recount_total(&mut self) {
        self.total = self.counts.iter().flatten().sum();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_obs: u64,
    pub n_exp: u64,
    pub seed: u64,
    #[serde(default = "default_treatment_prob")]
    pub treatment_prob: f64,
    #[serde(default = "default_shards")]
    pub shards: usize,
}

fn default_treatment_prob() -> f64 {
    0.5
}

fn default_shards() -> usize {
    16
}

impl SimConfig {
    /// 50M observational and 50M experimental samples.
    pub const FULL_SCALE: u64 = 50_000_000;
    pub const DEFAULT_SCALE: u64 = 10_000_000;

    pub fn new(n_obs: u64, n_exp: u64, seed: u64) -> Self {
        Self {
            n_obs,
            n_exp,
            seed,
            treatment_prob: default_treatment_prob(),
            shards: default_shards(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 || self.n_exp == 0 {
            return Err(Error::malformed("sample counts must be positive"));
        }
        if !(self.treatment_prob > 0.0 && self.treatment_prob < 1.0) {
            return Err(Error::malformed(format!(
                "treatment_prob = {} must lie in (0, 1)",
                self.treatment_prob
            )));
        }
        if self.shards == 0 {
            return Err(Error::malformed("shard count must be positive"));
        }
        Ok(())
    }
}

/// Structural outcomes of every full covariate vector, precomputed once.
///
/// Bits 0..16 hold the observational `(x, y)` pair for each noise index
/// `u_x*4 + u_m*2 + u_y`; bits 16..24 hold the outcome under `do(x)` for
/// each index `x*4 + u_m*2 + u_y`.
struct OutcomeTable(Vec<u32>);

impl OutcomeTable {
    fn build(spec: &ScmSpec) -> Self {
        let entries = (0..1u32 << N_FEATURES)
            .into_par_iter()
            .map(|bits| {
                let scores = spec.unit_scores(FullFeatureVector::from_bits_unchecked(bits));
                let mut code = 0u32;
                for idx in 0..8u32 {
                    let u = Exogenous {
                        u_x: idx & 4 != 0,
                        u_m: idx & 2 != 0,
                        u_y: idx & 1 != 0,
                    };
                    let (x, y) = spec.observe(&scores, u);
                    code |= ((x as u32) << 1 | y as u32) << (2 * idx);
                    if spec.respond(&scores, u.u_x, u) {
                        code |= 1 << (16 + idx);
                    }
                }
                code
            })
            .collect();
        OutcomeTable(entries)
    }

    #[inline]
    fn observational(&self, z: u32, noise: u32) -> (bool, bool) {
        let c = (self.0[z as usize] >> (2 * noise)) & 3;
        (c & 2 != 0, c & 1 != 0)
    }

    #[inline]
    fn experimental(&self, z: u32, x: bool, noise_my: u32) -> bool {
        let idx = (x as u32) << 2 | noise_my;
        (self.0[z as usize] >> (16 + idx)) & 1 != 0
    }
}

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
fn bernoulli(rng: &mut Xoshiro256StarStar, p: f64) -> bool {
    ((rng.next_u64() >> 11) as f64 * INV_2_53) < p
}

/// Generator for shard `shard` of `regime`.
pub fn shard_rng(seed: u64, regime: Regime, shard: usize) -> Xoshiro256StarStar {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    if regime == Regime::Experimental {
        rng.long_jump();
    }
    for _ in 0..shard {
        rng.jump();
    }
    rng
}

fn shard_sizes(n: u64, shards: usize) -> Vec<u64> {
    let s = shards as u64;
    (0..s).map(|i| n / s + u64::from(i < n % s)).collect()
}

fn run_shard(
    spec: &ScmSpec,
    table: &OutcomeTable,
    regime: Regime,
    n: u64,
    treatment_prob: f64,
    mut rng: Xoshiro256StarStar,
) -> RegimeCounts {
    let mut out = RegimeCounts::empty(regime);
    let mediated = spec.kind.has_mediator();
    let p_m = spec.bern_m.unwrap_or(0.0);
    let observed_mask = (N_SUBGROUPS - 1) as u32;
    for _ in 0..n {
        let mut z = 0u32;
        for (i, &p) in spec.bern_z.iter().enumerate() {
            z |= (bernoulli(&mut rng, p) as u32) << i;
        }
        let u_x = bernoulli(&mut rng, spec.bern_x) as u32;
        let u_m = if mediated { bernoulli(&mut rng, p_m) as u32 } else { 0 };
        let u_y = bernoulli(&mut rng, spec.bern_y) as u32;
        let (x, y) = match regime {
            Regime::Observational => table.observational(z, u_x << 2 | u_m << 1 | u_y),
            Regime::Experimental => {
                let x = bernoulli(&mut rng, treatment_prob);
                (x, table.experimental(z, x, u_m << 1 | u_y))
            }
        };
        out.counts[(z & observed_mask) as usize][cell_index(x, y)] += 1;
    }
    out.total = n;
    out
}

/// Draws `cfg.n_obs` observational and `cfg.n_exp` experimental samples and
/// tallies them per observed subgroup. Hidden covariates are drawn but never
/// recorded.
pub fn sample_counts(spec: &ScmSpec, cfg: &SimConfig) -> Result<(RegimeCounts, RegimeCounts)> {
    spec.validate()?;
    cfg.validate()?;
    let table = OutcomeTable::build(spec);
    let run = |regime: Regime, n: u64| {
        let jobs: Vec<(usize, u64)> = shard_sizes(n, cfg.shards).into_iter().enumerate().collect();
        let parts: Vec<RegimeCounts> = jobs
            .par_iter()
            .map(|&(s, size)| {
                run_shard(spec, &table, regime, size, cfg.treatment_prob, shard_rng(cfg.seed, regime, s))
            })
            .collect();
        let mut merged = RegimeCounts::empty(regime);
        for p in &parts {
            merged.merge(p);
        }
        merged
    };
    Ok((
        run(Regime::Observational, cfg.n_obs),
        run(Regime::Experimental, cfg.n_exp),
    ))
}

/// Plug-in estimate of one subgroup's distribution: treatment-arm outcome
/// rates from the experimental table, cell frequencies from the
/// observational one.
pub fn estimate_distribution<T: Scalar>(
    obs: &RegimeCounts,
    exp: &RegimeCounts,
    key: SubgroupKey,
) -> Result<CausalDistribution<T>> {
    let [e_xy, e_xyp, e_xpy, e_xpyp] = exp.cells(key);
    let n_x = e_xy + e_xyp;
    let n_xp = e_xpy + e_xpyp;
    if n_x == 0 || n_xp == 0 {
        return Err(Error::InsufficientData(format!(
            "subgroup {key} has an empty experimental arm ({n_x} treated, {n_xp} control)"
        )));
    }
    let o = obs.cells(key);
    let n_obs: u64 = o.iter().sum();
    if n_obs == 0 {
        return Err(Error::InsufficientData(format!(
            "subgroup {key} has no observational samples"
        )));
    }
    let ratio = |a: u64, b: u64| T::lit(a as f64) / T::lit(b as f64);
    Ok(CausalDistribution {
        p_yx: ratio(e_xy, n_x),
        p_yxp: ratio(e_xpy, n_xp),
        p_xy: ratio(o[0], n_obs),
        p_xyp: ratio(o[1], n_obs),
        p_xpy: ratio(o[2], n_obs),
        p_xpyp: ratio(o[3], n_obs),
    })
}

const COUNTS_HEADER: &str = "regime,key,n_xy,n_xyp,n_xpy,n_xpyp";

/// Writes both regimes, every subgroup, observational rows first.
pub fn write_counts_csv(obs: &RegimeCounts, exp: &RegimeCounts, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{COUNTS_HEADER}")?;
        for table in [obs, exp] {
            for (key, c) in table.counts.iter().enumerate() {
                writeln!(w, "{},{key},{},{},{},{}", table.regime, c[0], c[1], c[2], c[3])?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_counts_csv(path: &Path) -> Result<(RegimeCounts, RegimeCounts)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut obs = RegimeCounts::empty(Regime::Observational);
    let mut exp = RegimeCounts::empty(Regime::Experimental);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != COUNTS_HEADER {
                return Err(Error::Parse {
                    path: path.into(),
                    line: 1,
                    msg: format!("expected header `{COUNTS_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                msg: "expected 6 fields".into(),
            });
        }
        let regime: Regime = f[0].parse()?;
        let key = SubgroupKey::new(parse_field(path, lineno, f[1])?)?;
        let mut cells = [0u64; 4];
        for (c, s) in cells.iter_mut().zip(&f[2..]) {
            *c = parse_field(path, lineno, s)?;
        }
        let table = match regime {
            Regime::Observational => &mut obs,
            Regime::Experimental => &mut exp,
        };
        for (a, b) in table.counts[key.index()].iter_mut().zip(cells) {
            *a += b;
        }
    }
    obs.recount_total();
    exp.recount_total();
    Ok((obs, exp))
}
