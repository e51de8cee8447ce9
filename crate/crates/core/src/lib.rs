//! Synthetic causal data, exact and estimated bounds on the probability of
//! necessity and sufficiency, and a small neural regressor that predicts
//! those bounds for every observed subgroup from the few that have enough
//! samples.
//!
//! Pipeline: [`scm`] models → exact [`oracle`] ground truth and Monte Carlo
//! [`sampler`] counts → [`bounds`] on sufficiently sampled subgroups →
//! [`dataset`] tables → [`mlp`] training → [`metrics`] against the oracle.
//! [`pipeline`] chains the stages with a reproducible run manifest.

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod format;
pub mod metrics;
pub mod mlp;
pub mod oracle;
pub mod pipeline;
pub mod sampler;
pub mod scalar;
pub mod scm;

pub use bounds::{
    identify_monotone, is_monotone, pn_bounds, pns_bounds, ps_bounds, BoundPair,
    CausalDistribution, MonotoneIdentification, QueryKind,
};
pub use dataset::{BoundDataset, BoundSide, LabeledExample};
pub use error::{Error, Result};
pub use mlp::{Activation, MlpConfig, MlpModel};
pub use oracle::{InformerRecord, SubgroupKey};
pub use sampler::{Regime, RegimeCounts, SimConfig};
pub use scalar::Scalar;
pub use scm::{FullFeatureVector, ScmKind, ScmSpec};

/// Double-precision distribution, the default for all pipeline stages.
pub type Distribution = CausalDistribution<f64>;
/// Double-precision bound pair.
pub type Bounds = BoundPair<f64>;
/// Double-precision informer record.
pub type Informer = InformerRecord<f64>;
/// Double-precision regressor.
pub type Mlp = MlpModel<f64>;
/// Single-precision regressor.
pub type Mlp32 = MlpModel<f32>;
