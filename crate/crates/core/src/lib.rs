//! Gaussian-process calibration of black-box regressors.
//!
//! A GP is fitted to the residuals of a pretrained model using a composite
//! kernel over the inputs and the model's own outputs; the GP posterior gives
//! both a corrected point prediction and a predictive variance.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod error;
pub mod exact_gp;
pub mod harness;
pub mod hyperopt;
pub mod kernels;
pub mod metrics;
pub mod mlp;
mod linalg;
pub mod predictive;
pub mod rio;
pub mod sparse_gp;

pub use error::{Error, ErrorClass, Result};
pub use predictive::PredictiveGaussian;
