//! The four binary structural causal models used to generate data.
//!
//! Every model has twenty binary covariates `Z_i = U_{Z_i}`, a binary
//! treatment `X`, a binary outcome `Y` and, for the mediator model, a binary
//! mediator `M`. The exogenous noises `U_X`, `U_M`, `U_Y` are Bernoulli. All
//! structural thresholds are strict, so a score landing exactly on a
//! threshold maps to `0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of covariates in every model.
pub const N_FEATURES: usize = 20;
/// Covariates visible to the learner (`Z_1..Z_15`).
pub const N_OBSERVED: usize = 15;
/// Masked covariates (`Z_16..Z_20`).
pub const N_HIDDEN: usize = 5;
/// Number of observed subgroups, `2^15`.
pub const N_SUBGROUPS: usize = 1 << N_OBSERVED;
/// Hidden completions per subgroup, `2^5`.
pub const N_COMPLETIONS: usize = 1 << N_HIDDEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScmKind {
    /// `Z -> X`, `Z -> Y`, `X -> Y`.
    Confounder,
    /// `Z -> Y`, `X -> Y`.
    OutcomeCovariate,
    /// `X -> Y` only.
    Direct,
    /// `Z -> X`, `Z -> Y`, `X -> M -> Y`, `X -> Y`.
    Mediator,
}

impl ScmKind {
    pub const ALL: [ScmKind; 4] = [
        ScmKind::Confounder,
        ScmKind::OutcomeCovariate,
        ScmKind::Direct,
        ScmKind::Mediator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScmKind::Confounder => "confounder",
            ScmKind::OutcomeCovariate => "outcome-covariate",
            ScmKind::Direct => "direct",
            ScmKind::Mediator => "mediator",
        }
    }

    /// Whether the treatment depends on the covariates through `X_Z`.
    pub fn has_xz(self) -> bool {
        matches!(self, ScmKind::Confounder | ScmKind::Mediator)
    }

    /// Whether the outcome depends on the covariates through `Y_Z`.
    pub fn has_yz(self) -> bool {
        !matches!(self, ScmKind::Direct)
    }

    pub fn has_mediator(self) -> bool {
        matches!(self, ScmKind::Mediator)
    }
}

impl fmt::Display for ScmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "confounder" => Ok(ScmKind::Confounder),
            "outcome-covariate" | "covariate" => Ok(ScmKind::OutcomeCovariate),
            "direct" => Ok(ScmKind::Direct),
            "mediator" => Ok(ScmKind::Mediator),
            other => Err(Error::malformed(format!("unknown SCM `{other}`"))),
        }
    }
}

/// Assignment of all twenty covariates; bit `i` holds `z_{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FullFeatureVector(u32);

impl FullFeatureVector {
    pub const MASK: u32 = (1 << N_FEATURES) - 1;

    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits & !Self::MASK != 0 {
            return Err(Error::malformed(format!(
                "feature bits {bits:#x} exceed {N_FEATURES} features"
            )));
        }
        Ok(Self(bits))
    }

    /// Builds a vector from `z1..z20` given as 0/1 values.
    pub fn from_values(z: &[u8]) -> Result<Self> {
        if z.len() != N_FEATURES {
            return Err(Error::malformed(format!(
                "expected {N_FEATURES} features, got {}",
                z.len()
            )));
        }
        let mut bits = 0u32;
        for (i, &v) in z.iter().enumerate() {
            match v {
                0 => {}
                1 => bits |= 1 << i,
                _ => return Err(Error::malformed(format!("z{} = {v} is not binary", i + 1))),
            }
        }
        Ok(Self(bits))
    }

    #[inline]
    pub(crate) const fn from_bits_unchecked(bits: u32) -> Self {
        Self(bits)
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    /// Value of `z_{i+1}`.
    #[inline]
    pub fn get(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    pub fn values(self) -> [u8; N_FEATURES] {
        std::array::from_fn(|i| self.get(i) as u8)
    }
}

/// One draw of the exogenous noises that drive `X`, `M` and `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Exogenous {
    pub u_x: bool,
    pub u_m: bool,
    pub u_y: bool,
}

/// Covariate-dependent scores of one unit, `X_Z(z)` and `Y_Z(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnitScores {
    pub x_z: f64,
    pub y_z: f64,
}

/// Structural coefficients and exogenous priors of one model.
///
/// Fields that a kind does not use are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub kind: ScmKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xz_coeffs: Option<[f64; N_FEATURES]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yz_coeffs: Option<[f64; N_FEATURES]>,
    pub bern_z: [f64; N_FEATURES],
    pub bern_x: f64,
    pub bern_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bern_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_yx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_ym: Option<f64>,
    #[serde(default = "default_observed")]
    pub n_observed: usize,
    #[serde(default = "default_hidden")]
    pub n_hidden: usize,
}

fn default_observed() -> usize {
    N_OBSERVED
}

fn default_hidden() -> usize {
    N_HIDDEN
}

const XZ: [f64; N_FEATURES] = [
    0.259223510143,
    -0.658140989167,
    -0.75025831768,
    0.162906462426,
    0.652023463285,
    -0.0892939586541,
    0.421469107769,
    -0.443129684766,
    0.802624388789,
    -0.225740978499,
    0.716621631717,
    0.0650682260309,
    -0.220690334026,
    0.156355773665,
    -0.50693672491,
    -0.707060278115,
    0.418812816935,
    -0.0822118703986,
    0.769299853833,
    -0.511585391002,
];

const YZ: [f64; N_FEATURES] = [
    -0.792867111918,
    0.759967136147,
    0.55437722369,
    0.503970540409,
    -0.527187144651,
    0.378619988091,
    0.269255196301,
    0.671597043594,
    0.396010142274,
    0.325228576643,
    0.657808327574,
    0.801655023993,
    0.0907679484097,
    -0.0713852594543,
    -0.0691046005285,
    -0.222582013343,
    -0.848408031595,
    -0.584285069026,
    -0.324874831799,
    0.625621583197,
];

const BERN_Z: [f64; N_FEATURES] = [
    0.352913861526,
    0.460995855543,
    0.331702473392,
    0.885505026779,
    0.017026872706,
    0.380772701708,
    0.028092602705,
    0.220819399962,
    0.617742227477,
    0.981975046713,
    0.142042291381,
    0.833602592350,
    0.882938907115,
    0.542143191999,
    0.085023436884,
    0.645357252864,
    0.863787135134,
    0.460539711624,
    0.314014079207,
    0.685879388218,
];

const C_Y: f64 = -0.77953605542;

impl ScmSpec {
    /// The published coefficients for `kind`.
    pub fn builtin(kind: ScmKind) -> Self {
        let base = ScmSpec {
            kind,
            xz_coeffs: None,
            yz_coeffs: None,
            bern_z: BERN_Z,
            bern_x: 0.601680857267,
            bern_y: 0.497668975278,
            bern_m: None,
            c_y: Some(C_Y),
            c_m: None,
            c_yx: None,
            c_ym: None,
            n_observed: N_OBSERVED,
            n_hidden: N_HIDDEN,
        };
        match kind {
            ScmKind::Confounder => ScmSpec {
                xz_coeffs: Some(XZ),
                yz_coeffs: Some(YZ),
                ..base
            },
            ScmKind::OutcomeCovariate => ScmSpec {
                yz_coeffs: Some(YZ),
                ..base
            },
            ScmKind::Direct => base,
            ScmKind::Mediator => ScmSpec {
                xz_coeffs: Some(XZ),
                yz_coeffs: Some(YZ),
                bern_x: 0.698319142733,
                bern_y: 0.502331024722,
                bern_m: Some(0.402331024722),
                c_y: None,
                c_m: Some(-0.74234511918),
                c_yx: Some(0.87953605542),
                c_ym: Some(0.24235642321),
                ..base
            },
        }
    }

    /// Looks up a preset by name (`confounder`, `outcome-covariate`,
    /// `direct`, `mediator`).
    pub fn preset(name: &str) -> Result<Self> {
        name.parse().map(Self::builtin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_observed != N_OBSERVED || self.n_hidden != N_HIDDEN {
            return Err(Error::malformed(format!(
                "only {N_OBSERVED} observed / {N_HIDDEN} hidden features are supported, got {}/{}",
                self.n_observed, self.n_hidden
            )));
        }
        let check_p = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::malformed(format!("{name} = {p} is not a probability")))
            }
        };
        for (i, &p) in self.bern_z.iter().enumerate() {
            check_p(&format!("bern_z[{i}]"), p)?;
        }
        check_p("bern_x", self.bern_x)?;
        check_p("bern_y", self.bern_y)?;
        let need = |name: &str, present: bool| {
            if present {
                Ok(())
            } else {
                Err(Error::malformed(format!("{} model requires `{name}`", self.kind)))
            }
        };
        if self.kind.has_xz() {
            need("xz_coeffs", self.xz_coeffs.is_some())?;
        }
        if self.kind.has_yz() {
            need("yz_coeffs", self.yz_coeffs.is_some())?;
        }
        if self.kind.has_mediator() {
            need("bern_m", self.bern_m.is_some())?;
            need("c_m", self.c_m.is_some())?;
            need("c_yx", self.c_yx.is_some())?;
            need("c_ym", self.c_ym.is_some())?;
            check_p("bern_m", self.bern_m.unwrap_or(0.0))?;
        } else {
            need("c_y", self.c_y.is_some())?;
        }
        let finite = self
            .xz_coeffs
            .iter()
            .chain(self.yz_coeffs.iter())
            .flatten()
            .chain([self.c_y, self.c_m, self.c_yx, self.c_ym].iter().flatten())
            .all(|c| c.is_finite());
        if !finite {
            return Err(Error::malformed("non-finite structural coefficient"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScmSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// `X_Z(z) = sum_i z_i * xz_coeffs[i]`.
    pub fn dot_xz(&self, z: FullFeatureVector) -> Result<f64> {
        match (&self.xz_coeffs, self.kind.has_xz()) {
            (Some(c), true) => Ok(dot(c, z)),
            _ => Err(Error::UnsupportedForKind {
                op: "dot_xz",
                kind: self.kind,
            }),
        }
    }

    /// `Y_Z(z) = sum_i z_i * yz_coeffs[i]`.
    pub fn dot_yz(&self, z: FullFeatureVector) -> Result<f64> {
        match (&self.yz_coeffs, self.kind.has_yz()) {
            (Some(c), true) => Ok(dot(c, z)),
            _ => Err(Error::UnsupportedForKind {
                op: "dot_yz",
                kind: self.kind,
            }),
        }
    }

    /// Both covariate scores, with absent terms reading as zero.
    pub fn unit_scores(&self, z: FullFeatureVector) -> UnitScores {
        UnitScores {
            x_z: self.dot_xz(z).unwrap_or(0.0),
            y_z: self.dot_yz(z).unwrap_or(0.0),
        }
    }

    /// Treatment mechanism: `1` iff `X_Z + U_X > 0.5`. Kinds without `X_Z`
    /// ignore `x_z`.
    #[inline]
    pub fn f_x(&self, x_z: f64, u_x: bool) -> bool {
        let score = if self.kind.has_xz() { x_z } else { 0.0 };
        score + bit(u_x) > 0.5
    }

    /// Mediator mechanism: `1` iff `C_M * X + U_M > 0.5`.
    pub fn f_m(&self, x: bool, u_m: bool) -> Result<bool> {
        match (self.kind, self.c_m) {
            (ScmKind::Mediator, Some(c_m)) => Ok(c_m * bit(x) + bit(u_m) > 0.5),
            _ => Err(Error::UnsupportedForKind {
                op: "f_m",
                kind: self.kind,
            }),
        }
    }

    /// Outcome mechanism. `m` must be supplied exactly for the mediator model.
    pub fn f_y(&self, x: bool, m: Option<bool>, y_z: f64, u_y: bool) -> Result<bool> {
        match (self.kind.has_mediator(), m) {
            (true, None) => Err(Error::malformed("mediator model requires a value for M")),
            (false, Some(_)) => Err(Error::malformed(format!(
                "{} model has no mediator",
                self.kind
            ))),
            _ => Ok(self.outcome(x, m.unwrap_or(false), y_z, u_y)),
        }
    }

    #[inline]
    fn mediator_value(&self, x: bool, u_m: bool) -> bool {
        self.c_m.unwrap_or(0.0) * bit(x) + bit(u_m) > 0.5
    }

    #[inline]
    fn outcome(&self, x: bool, m: bool, y_z: f64, u_y: bool) -> bool {
        match self.kind {
            ScmKind::Confounder | ScmKind::OutcomeCovariate => {
                let v = self.c_y.unwrap_or(0.0) * bit(x) + y_z + bit(u_y);
                (0.0 < v && v < 1.0) || (1.0 < v && v < 2.0)
            }
            ScmKind::Direct => self.c_y.unwrap_or(0.0) * bit(x) + bit(u_y) > 0.7,
            ScmKind::Mediator => {
                self.c_yx.unwrap_or(0.0) * bit(x)
                    + self.c_ym.unwrap_or(0.0) * bit(m)
                    + y_z
                    + bit(u_y)
                    > 2.0
            }
        }
    }

    /// Outcome under `do(X = x)` for a unit with the given scores and noise.
    #[inline]
    pub fn respond(&self, scores: &UnitScores, x: bool, u: Exogenous) -> bool {
        let m = self.kind.has_mediator() && self.mediator_value(x, u.u_m);
        self.outcome(x, m, scores.y_z, u.u_y)
    }

    /// Treatment and outcome the unit shows when left alone.
    #[inline]
    pub fn observe(&self, scores: &UnitScores, u: Exogenous) -> (bool, bool) {
        let x = self.f_x(scores.x_z, u.u_x);
        (x, self.respond(scores, x, u))
    }

    /// Prior mass of one noise assignment, restricted to the noises in
    /// `vars` (others contribute a factor of one).
    #[inline]
    pub fn noise_mass(&self, u: Exogenous, vars: NoiseVars) -> f64 {
        let mut p = 1.0;
        if vars.u_x {
            p *= bern_mass(self.bern_x, u.u_x);
        }
        if vars.u_m && self.kind.has_mediator() {
            p *= bern_mass(self.bern_m.unwrap_or(0.0), u.u_m);
        }
        if vars.u_y {
            p *= bern_mass(self.bern_y, u.u_y);
        }
        p
    }

    /// All assignments of the noises in `vars`, in ascending `(u_x, u_m,
    /// u_y)` order. `u_m` is enumerated only for the mediator model.
    pub fn noise_assignments(&self, vars: NoiseVars) -> Vec<Exogenous> {
        let levels = |on: bool| if on { vec![false, true] } else { vec![false] };
        let mut out = Vec::with_capacity(8);
        for u_x in levels(vars.u_x) {
            for u_m in levels(vars.u_m && self.kind.has_mediator()) {
                for u_y in levels(vars.u_y) {
                    out.push(Exogenous { u_x, u_m, u_y });
                }
            }
        }
        out
    }

    /// Prior mass `P(Z_i = z_i)` of covariate `i`.
    #[inline]
    pub fn feature_mass(&self, i: usize, value: bool) -> f64 {
        bern_mass(self.bern_z[i], value)
    }
}

/// Which exogenous noises an enumeration ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseVars {
    pub u_x: bool,
    pub u_m: bool,
    pub u_y: bool,
}

impl NoiseVars {
    /// Noises relevant to interventional and counterfactual queries.
    pub const RESPONSE: NoiseVars = NoiseVars {
        u_x: false,
        u_m: true,
        u_y: true,
    };
    pub const ALL: NoiseVars = NoiseVars {
        u_x: true,
        u_m: true,
        u_y: true,
    };
}

#[inline]
fn bit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn bern_mass(p: f64, value: bool) -> f64 {
    if value {
        p
    } else {
        1.0 - p
    }
}

#[inline]
fn dot(coeffs: &[f64; N_FEATURES], z: FullFeatureVector) -> f64 {
    let mut s = 0.0;
    for (i, c) in coeffs.iter().enumerate() {
        if z.get(i) {
            s += c;
        }
    }
    s
}
