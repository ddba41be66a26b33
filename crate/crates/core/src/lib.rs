//! Design and analysis of stepped-wedge cluster randomized trials with
//! anticipation effects and exposure-time treatment-effect heterogeneity.
//!
//! The crate covers layout construction ([`design`]), exchangeable covariance
//! algebra ([`correlation`]), model fitting and exact expectations
//! ([`estimation`]), closed-form bias weights ([`bias`]), analytic variance and
//! power ([`power`]) and simulation studies ([`montecarlo`]).

pub mod bias;
pub mod correlation;
pub mod design;
pub mod error;
pub mod estimation;
pub mod model;
pub mod montecarlo;
pub mod power;

pub use correlation::CorrelationParams;
pub use design::{DesignConstants, DesignLayout, IndicatorSet, Sequence};
pub use error::{Error, Result};
pub use model::{ModelKind, TrueModelParams};
