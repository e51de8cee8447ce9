//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use pns_core::{CausalDistribution, ScmKind, ScmSpec};
use rand::Rng;

/// Response types: outcome as a function of treatment.
/// 0 never, 1 helped (`y = x`), 2 hurt (`y = !x`), 3 always.
pub fn response(r: usize, x: bool) -> bool {
    match r {
        0 => false,
        1 => x,
        2 => !x,
        _ => true,
    }
}

/// Mass over (treatment, response type), index `x * 4 + r`.
pub type TypeMass = [f64; 8];

pub fn random_type_mass(rng: &mut impl Rng) -> TypeMass {
    let mut q = [0.0; 8];
    let sparsity = rng.random_range(0.0..0.5);
    for v in &mut q {
        if rng.random::<f64>() >= sparsity {
            *v = rng.random::<f64>();
        }
    }
    if q.iter().sum::<f64>() == 0.0 {
        q[rng.random_range(0..8)] = 1.0;
    }
    let s: f64 = q.iter().sum();
    q.map(|v| v / s)
}

/// Observational and interventional quantities implied by a type mass.
pub fn distribution_of(q: &TypeMass) -> CausalDistribution<f64> {
    let mut joint = [0.0; 4];
    let (mut p_yx, mut p_yxp) = (0.0, 0.0);
    for x in [true, false] {
        for r in 0..4 {
            let m = q[x as usize * 4 + r];
            let y = response(r, x);
            joint[(!x as usize) * 2 + (!y as usize)] += m;
            if response(r, true) {
                p_yx += m;
            }
            if response(r, false) {
                p_yxp += m;
            }
        }
    }
    CausalDistribution {
        p_yx,
        p_yxp,
        p_xy: joint[0],
        p_xyp: joint[1],
        p_xpy: joint[2],
        p_xpyp: joint[3],
    }
}

/// Linear constraints `A q = b` tying a type mass to a distribution.
fn constraints(d: &CausalDistribution<f64>) -> (Vec<[f64; 8]>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (x, y, p) in [
        (true, true, d.p_xy),
        (true, false, d.p_xyp),
        (false, true, d.p_xpy),
        (false, false, d.p_xpyp),
    ] {
        let mut a = [0.0; 8];
        for r in 0..4 {
            if response(r, x) == y {
                a[x as usize * 4 + r] = 1.0;
            }
        }
        rows.push(a);
        rhs.push(p);
    }
    for (t, p) in [(true, d.p_yx), (false, d.p_yxp)] {
        let mut a = [0.0; 8];
        for x in 0..2 {
            for r in 0..4 {
                if response(r, t) {
                    a[x * 4 + r] = 1.0;
                }
            }
        }
        rows.push(a);
        rhs.push(p);
    }
    (rows, rhs)
}

/// Solves the square system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Keeps a maximal linearly independent subset of the constraint rows.
fn independent_rows(rows: &[[f64; 8]], rhs: &[f64]) -> (Vec<[f64; 8]>, Vec<f64>) {
    let mut basis: Vec<[f64; 8]> = Vec::new();
    let mut kept = (Vec::new(), Vec::new());
    for (row, &b) in rows.iter().zip(rhs) {
        let mut v = *row;
        for e in &basis {
            let lead = e.iter().position(|c| c.abs() > 1e-12).unwrap();
            let f = v[lead] / e[lead];
            for k in 0..8 {
                v[k] -= f * e[k];
            }
        }
        if v.iter().any(|c| c.abs() > 1e-9) {
            basis.push(v);
            kept.0.push(*row);
            kept.1.push(b);
        }
    }
    kept
}

/// Minimum and maximum of `objective . q` over all type masses consistent
/// with `d`, by enumerating basic feasible solutions.
pub fn lp_range(d: &CausalDistribution<f64>, objective: &[f64; 8]) -> (f64, f64) {
    let (rows, rhs) = constraints(d);
    let (rows, rhs) = independent_rows(&rows, &rhs);
    let rank = rows.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for subset in 0u32..256 {
        if subset.count_ones() as usize != rank {
            continue;
        }
        let cols: Vec<usize> = (0..8).filter(|c| subset >> c & 1 == 1).collect();
        let a: Vec<Vec<f64>> = rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
        let Some(sol) = solve(a, rhs.clone()) else { continue };
        if sol.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let value: f64 = cols.iter().zip(&sol).map(|(&c, &v)| objective[c] * v).sum();
        lo = lo.min(value);
        hi = hi.max(value);
    }
    assert!(lo.is_finite(), "no feasible type mass for {d:?}");
    (lo, hi)
}

/// PNS objective: mass of the helped type in both arms.
pub const PNS_OBJECTIVE: [f64; 8] = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];

/// Per-unit quantities computed by direct enumeration of the structural
/// equations: `[p_yx, p_yxp, p_xy, p_xyp, p_xpy, p_xpyp, pns]`.
pub fn brute_unit(spec: &ScmSpec, bits: u32) -> [f64; 7] {
    let z = |i: usize| ((bits >> i) & 1) as f64;
    let dot = |c: &Option<[f64; 20]>| c.map(|c| (0..20).map(|i| c[i] * z(i)).sum::<f64>()).unwrap_or(0.0);
    let (xz, yz) = (dot(&spec.xz_coeffs), dot(&spec.yz_coeffs));
    let fx = |ux: f64| xz + ux > 0.5;
    let fm = |x: f64, um: f64| spec.c_m.unwrap() * x + um > 0.5;
    let fy = |x: f64, um: f64, uy: f64| -> bool {
        match spec.kind {
            ScmKind::Confounder | ScmKind::OutcomeCovariate => {
                let v = spec.c_y.unwrap() * x + yz + uy;
                (0.0 < v && v < 1.0) || (1.0 < v && v < 2.0)
            }
            ScmKind::Direct => spec.c_y.unwrap() * x + uy > 0.7,
            ScmKind::Mediator => {
                let m = fm(x, um) as u8 as f64;
                spec.c_yx.unwrap() * x + spec.c_ym.unwrap() * m + yz + uy > 2.0
            }
        }
    };
    let bern = |p: f64, u: f64| if u == 1.0 { p } else { 1.0 - p };
    let um_values: &[f64] = if spec.kind == ScmKind::Mediator { &[0.0, 1.0] } else { &[0.0] };
    let mut out = [0.0; 7];
    for &um in um_values {
        let pm = if spec.kind == ScmKind::Mediator { bern(spec.bern_m.unwrap(), um) } else { 1.0 };
        for uy in [0.0, 1.0] {
            let w = pm * bern(spec.bern_y, uy);
            let (y1, y0) = (fy(1.0, um, uy), fy(0.0, um, uy));
            if y1 {
                out[0] += w;
            }
            if y0 {
                out[1] += w;
            }
            if y1 && !y0 {
                out[6] += w;
            }
            for ux in [0.0, 1.0] {
                let x = fx(ux);
                let y = fy(x as u8 as f64, um, uy);
                let cell = 2 + (!x as usize) * 2 + (!y as usize);
                out[cell] += w * bern(spec.bern_x, ux);
            }
        }
    }
    out
}

/// Completion-weighted subgroup average of [`brute_unit`], plus `P(c)`.
pub fn brute_subgroup(spec: &ScmSpec, key: u32) -> ([f64; 7], f64) {
    let bern = |p: f64, on: bool| if on { p } else { 1.0 - p };
    let mut acc = [0.0; 7];
    for hidden in 0..32u32 {
        let bits = key | hidden << 15;
        let mut w = 1.0;
        for i in 15..20 {
            w *= bern(spec.bern_z[i], bits >> i & 1 == 1);
        }
        let unit = brute_unit(spec, bits);
        for k in 0..7 {
            acc[k] += w * unit[k];
        }
    }
    let mut pc = 1.0;
    for i in 0..15 {
        pc *= bern(spec.bern_z[i], key >> i & 1 == 1);
    }
    (acc, pc)
}

/// Tight PNS bounds written out directly.
pub fn reference_pns_bounds(d: &CausalDistribution<f64>) -> (f64, f64) {
    let p_y = d.p_xy + d.p_xpy;
    let lo = [0.0, d.p_yx - d.p_yxp, p_y - d.p_yxp, d.p_yx - p_y]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = [
        d.p_yx,
        1.0 - d.p_yxp,
        d.p_xy + d.p_xpyp,
        d.p_yx - d.p_yxp + d.p_xyp + d.p_xpy,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}
