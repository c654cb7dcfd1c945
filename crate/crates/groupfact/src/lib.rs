//! Bayesian group nonnegative matrix factorization for multi-subject
//! nonnegative time-series features (EEG power spectra).
//!
//! The model decomposes each subject's feature matrix into a common basis
//! shared across subjects (one column per task class, selected by the frame
//! label) plus a per-subject individual basis mixed by nonnegative
//! activations, with exponential observation noise and Gamma priors.
//! Inference is mean-field coordinate ascent with generalized
//! inverse-Gaussian variational factors.
//!
//! Modules:
//! - [`special`]: log-scale Bessel K and GIG/Gamma moments
//! - [`model`]: containers and the exact generative sampler
//! - [`inference`]: coordinate-ascent variational inference and the bound
//! - [`classify`]: nearest-common-basis label prediction and evaluation
//! - [`data`]: delimited-text ingestion of precomputed PSD features
//! - [`config`]: run configuration shared with the CLI

pub mod classify;
pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod model;
pub mod special;

pub use error::{Error, Result};
