//! Learning pipeline for edge-FBG fiber shape sensors.
//!
//! Spectra from three co-located edge gratings in each of five sensing planes
//! are mapped to the 3-D positions of 21 markers along a 300 mm fiber. The
//! crate contains a phenomenological spectrum simulator, input/output
//! rescalings, a small reverse-mode autodiff engine, the regression CNN and
//! its Siamese variant, pair mining, Hyperband tuning and shape-error
//! metrics, plus the binary file formats used by the `edgefbg` CLI.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod hyperband;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pairs;
pub mod preprocess;
pub mod run;
pub mod simulator;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
