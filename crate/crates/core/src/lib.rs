//! Lower-tail analysis of the martingale limit `W = lim Z_n / a^n` of a
//! supercritical Galton-Watson process without extinction.
//!
//! The crate provides the Laplace transform of `W` and its Böttcher
//! function, the scale quantities that govern the Schröder-case lower tail,
//! numerical and asymptotic tail probabilities, and a seeded simulator of
//! the process conditioned on `W < eps`.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cmath;
pub mod error;
pub mod jet;
pub mod offspring;
pub mod real;
pub mod scales;
pub mod sim;
pub mod tail;

pub use analytic::{AnalyticConfig, BottcherValue, Model, SaddleSolution, SignedLog};
pub use error::{GwError, Result};
pub use offspring::OffspringDistribution;
pub use real::Real;
pub use tail::{InversionPlan, LogProb, Method};
pub use sim::{ConditionalExperiment, TreeRecord, WEstimate};
pub use scales::{EpsilonScales, Mu1Scales, Regime};

pub type Offspring = OffspringDistribution<f64>;
pub type GwModel = Model<f64>;
