//! Maximum-likelihood state estimation for three-phase unbalanced
//! distribution networks.
//!
//! The crate is built from six blocks: network modeling ([`netmodel`]),
//! measurement-error distributions ([`distributions`]), a rectangular
//! power-flow oracle ([`powerflow`]), an equality-constrained interior-point
//! solver ([`nlp`]), the estimator with its WLS reference path
//! ([`estimator`]), and a reproducible Monte-Carlo harness ([`harness`]).

pub mod distributions;
pub mod estimator;
pub mod harness;
pub mod netmodel;
pub mod nlp;
pub mod powerflow;

pub use distributions::UncertaintyModel;
pub use estimator::{EstimatorConfig, Measurement, MeasurementSet, SeResult};
pub use netmodel::{Network, Phase, PhaseSet};
pub use powerflow::{PfSpec, StateSolution};
