//! Single-view shape reconstruction from opposing orthographic 2.5D maps.
//!
//! The pipeline renders (or ingests) front-view depth, normal and silhouette
//! maps, looks for a global reflective symmetry plane, completes the hidden
//! side with reflected and predicted back-view maps, fuses everything into
//! an oriented point cloud and surfaces it with screened Poisson
//! reconstruction. Evaluation metrics compare the result to ground truth.

pub mod backpred;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod ortho;
pub mod pipeline;
pub mod recon;
pub mod shapes;
pub mod symmetry;
pub mod util;

pub use error::{Error, Result};
