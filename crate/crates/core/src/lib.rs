//! Numerical laboratory for Finsler geodesic flows on the 2-sphere and
//! 2-torus built from rotational metrics and Katok's commuting perturbation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod flow;
pub mod harness;
pub mod metrics;
pub mod profiles;
pub mod sections;

pub use error::{Error, Result};
pub use flow::{IntegratorConfig, OrbitTrace};
pub use metrics::{CotangentPoint, DualMetric, KatokMetric};
pub use profiles::RotationalProfile;
