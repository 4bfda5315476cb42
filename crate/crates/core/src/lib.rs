//! Hourly attendance forecasting from reservation dynamics.
//!
//! The model math is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision types used by training, evaluation and
//! persistence.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod net;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod timegrid;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::Mat<f64>;
pub type Params = net::ParamStore<f64>;
pub type Forecaster = net::Model<f64>;
pub type Optimizer = training::Adam<f64>;
