//! Diffusion-based unsupervised anomaly detection with temporal harmonization (THOR).
//!
//! The library builds pseudo-healthy restorations of grayscale images with a
//! denoising diffusion model and scores anomalies by comparing the input
//! against its restoration. The THOR restoration loop additionally harmonizes
//! intermediate predictions with the input, weighted by morphologically
//! conditioned anomaly masks, so healthy regions stay close to the original
//! while anomalous regions are replaced.
//!
//! Main entry points:
//! - [`schedule::NoiseSchedule`] and [`noise::NoiseSpec`] parameterize the
//!   diffusion process (Gaussian or fractal simplex noise).
//! - [`denoiser`] trains and persists the epsilon-predicting network.
//! - [`restoration`] runs plain partial-diffusion restoration and the THOR
//!   harmonization loop.
//! - [`anomaly`] computes residual-times-perceptual anomaly maps, the
//!   closing-then-dilation mask operator, and the harmonic-mean score.
//! - [`data`] generates the synthetic phantom benchmark with ground truth.
//! - [`eval`] implements max-Dice, size stratification, box recall/F1, and
//!   the noise-level ablation harness.

pub mod anomaly;
pub mod cli;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod morphology;
pub mod nn;
pub mod noise;
pub mod restoration;
pub mod schedule;

pub use error::{Error, Result};
pub use grid::ImageGrid;
pub use noise::{NoiseKind, NoiseSpec};
pub use schedule::NoiseSchedule;
