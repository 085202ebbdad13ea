//! Multi-fidelity surrogate modeling with Gaussian-variational Bayesian
//! networks.
//!
//! A network is trained on plentiful low-fidelity data, then transferred to
//! mid- and high-fidelity data with part of its layers frozen. Predictive
//! uncertainty comes from Monte Carlo weight sampling. A chained co-kriging
//! model serves as the classical baseline, and a Gaussian-process Bayesian
//! optimizer tunes the network hyperparameters.
//!
//! The numerical modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation.

pub mod bayesnet;
pub mod inference;
pub mod kriging;
pub mod training;
pub mod data;
pub mod error;
pub mod hyperopt;
pub mod num;

pub use error::{Error, Result};
pub use num::Real;

pub type Network = bayesnet::BayesianNetwork<f64>;
pub type Network32 = bayesnet::BayesianNetwork<f32>;
