//! Tight bounds on the probabilities of causation from combined
//! experimental and observational data, and their point identification
//! under monotonicity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scm::{FullFeatureVector, NoiseVars, ScmSpec};

/// Experimental effects and observational joint of a binary treatment and
/// outcome in one (sub)population.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CausalDistribution<T> {
    /// `P(y_x)`, outcome rate under `do(X = 1)`.
    pub p_yx: T,
    /// `P(y_{x'})`, outcome rate under `do(X = 0)`.
    pub p_yxp: T,
    /// `P(x, y)`
    pub p_xy: T,
    /// `P(x, y')`
    pub p_xyp: T,
    /// `P(x', y)`
    pub p_xpy: T,
    /// `P(x', y')`
    pub p_xpyp: T,
}

impl<T: Scalar> CausalDistribution<T> {
    /// `P(y) = P(x, y) + P(x', y)`.
    pub fn p_y(&self) -> T {
        self.p_xy + self.p_xpy
    }

    /// The four joint cells in `(xy, xy', x'y, x'y')` order.
    pub fn joint(&self) -> [T; 4] {
        [self.p_xy, self.p_xyp, self.p_xpy, self.p_xpyp]
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::tol(1e-9);
        let fields = [
            ("p_yx", self.p_yx),
            ("p_yxp", self.p_yxp),
            ("p_xy", self.p_xy),
            ("p_xyp", self.p_xyp),
            ("p_xpy", self.p_xpy),
            ("p_xpyp", self.p_xpyp),
        ];
        for (name, v) in fields {
            if !(v >= -tol && v <= T::one() + tol) {
                return Err(Error::malformed(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        let total: T = self.joint().iter().copied().sum();
        if (total - T::one()).abs() > tol {
            return Err(Error::malformed(format!(
                "observational joint sums to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> CausalDistribution<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        CausalDistribution {
            p_yx: c(self.p_yx),
            p_yxp: c(self.p_yxp),
            p_xy: c(self.p_xy),
            p_xyp: c(self.p_xyp),
            p_xpy: c(self.p_xpy),
            p_xpyp: c(self.p_xpyp),
        }
    }
}

/// Lower/upper bound on a probability of causation.
///
/// `valid` is false when noisy inputs make the lower bound exceed the
/// upper one; both raw (clamped) values are still reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair<T> {
    pub lower: T,
    pub upper: T,
    pub valid: bool,
}

impl<T: Scalar> BoundPair<T> {
    /// Clamps both ends to [0, 1] and flags crossing pairs.
    pub fn new(lower: T, upper: T) -> Self {
        let unit = |v: T| v.max(T::zero()).min(T::one());
        let (lower, upper) = (unit(lower), unit(upper));
        BoundPair {
            lower,
            upper,
            valid: lower <= upper + T::tol(1e-12),
        }
    }

    pub fn contains(&self, v: T, tol: T) -> bool {
        self.lower - tol <= v && v <= self.upper + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    /// Probability of necessity and sufficiency.
    Pns,
    /// Probability of necessity.
    Pn,
    /// Probability of sufficiency.
    Ps,
}

impl QueryKind {
    pub const ALL: [QueryKind; 3] = [QueryKind::Pns, QueryKind::Pn, QueryKind::Ps];

    pub fn bounds<T: Scalar>(self, d: &CausalDistribution<T>) -> Result<BoundPair<T>> {
        match self {
            QueryKind::Pns => pns_bounds(d),
            QueryKind::Pn => pn_bounds(d),
            QueryKind::Ps => ps_bounds(d),
        }
    }
}

fn max_of<T: Scalar>(vals: &[T]) -> T {
    vals.iter().copied().fold(T::neg_infinity(), T::max)
}

fn min_of<T: Scalar>(vals: &[T]) -> T {
    vals.iter().copied().fold(T::infinity(), T::min)
}

/// Bounds on `PNS = P(y_x, y'_{x'})`.
pub fn pns_bounds<T: Scalar>(d: &CausalDistribution<T>) -> Result<BoundPair<T>> {
    d.validate()?;
    let p_y = d.p_y();
    let lower = max_of(&[
        T::zero(),
        d.p_yx - d.p_yxp,
        p_y - d.p_yxp,
        d.p_yx - p_y,
    ]);
    let upper = min_of(&[
        d.p_yx,
        T::one() - d.p_yxp,
        d.p_xy + d.p_xpyp,
        d.p_yx - d.p_yxp + d.p_xyp + d.p_xpy,
    ]);
    Ok(BoundPair::new(lower, upper))
}

/// Bounds on `PN = P(y'_{x'} | x, y)`.
pub fn pn_bounds<T: Scalar>(d: &CausalDistribution<T>) -> Result<BoundPair<T>> {
    d.validate()?;
    if d.p_xy <= T::zero() {
        return Err(Error::UndefinedConditional("P(x, y)"));
    }
    let lower = T::zero().max((d.p_y() - d.p_yxp) / d.p_xy);
    let upper = T::one().min(((T::one() - d.p_yxp) - d.p_xpyp) / d.p_xy);
    Ok(BoundPair::new(lower, upper))
}

/// Bounds on `PS = P(y_x | x', y')`.
pub fn ps_bounds<T: Scalar>(d: &CausalDistribution<T>) -> Result<BoundPair<T>> {
    d.validate()?;
    if d.p_xpyp <= T::zero() {
        return Err(Error::UndefinedConditional("P(x', y')"));
    }
    let p_yp = T::one() - d.p_y();
    let p_ypx = T::one() - d.p_yx;
    let lower = T::zero().max((p_yp - p_ypx) / d.p_xpyp);
    let upper = T::one().min((d.p_yx - d.p_xy) / d.p_xpyp);
    Ok(BoundPair::new(lower, upper))
}

/// Point values of PNS, PN and PS when the outcome is monotone in the
/// treatment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneIdentification<T> {
    pub pns: T,
    pub pn: T,
    pub ps: T,
}

/// Identification under monotonicity. The caller vouches that no unit is
/// harmed by treatment; see [`is_monotone`].
pub fn identify_monotone<T: Scalar>(d: &CausalDistribution<T>) -> Result<MonotoneIdentification<T>> {
    d.validate()?;
    if d.p_xy <= T::zero() {
        return Err(Error::UndefinedConditional("P(x, y)"));
    }
    if d.p_xpyp <= T::zero() {
        return Err(Error::UndefinedConditional("P(x', y')"));
    }
    let p_y = d.p_y();
    Ok(MonotoneIdentification {
        pns: d.p_yx - d.p_yxp,
        pn: (p_y - d.p_yxp) / d.p_xy,
        ps: (d.p_yx - p_y) / d.p_xpyp,
    })
}

/// True iff no exogenous assignment (including zero-probability ones)
/// makes the unit with covariates `z` respond `Y_x = 0` and `Y_{x'} = 1`.
pub fn is_monotone(spec: &ScmSpec, z: FullFeatureVector) -> bool {
    let scores = spec.unit_scores(z);
    spec.noise_assignments(NoiseVars::RESPONSE)
        .into_iter()
        .all(|u| spec.respond(&scores, true, u) || !spec.respond(&scores, false, u))
}
