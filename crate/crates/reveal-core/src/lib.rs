//! Radio environment map reconstruction from sparse RSSI measurements.
//!
//! The crate builds gridded maps of received signal strength over a
//! geographic domain from a handful of sensor readings. The centerpiece is a
//! physics-constrained regressor: a small fully connected network trained on
//! a composite loss that mixes data error with the mismatch between the
//! Laplacian of the prediction and the Laplacian of the observed field
//! (estimated from the scattered sensors). Shadowing makes the observed
//! field's Laplacian nonzero; the log-distance mean component contributes
//! nothing away from the transmitter, so the constraint targets exactly the
//! spatial structure the data alone undersamples.
//!
//! Alongside the main model the crate ships everything needed to evaluate
//! it end to end: synthetic ground-truth scenes with correlated shadowing,
//! spatially balanced sensor selection, ordinary Kriging and dual-slope
//! rural-macro statistical baselines, and the scoring used to compare them.

pub mod baselines;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod mlp;
pub mod physics;
pub mod sampling;
pub mod scene;
pub mod shadow;

pub use error::{Error, Result};
pub use grid::{Grid, Point};
pub use scene::{ObservationSet, Scene, Transmitter};
