//! Recurrent generative image prior with MAP inference engines.
//!
//! The density model factorizes a grayscale image autoregressively in raster
//! order: a two-dimensional LSTM walks the lattice and summarizes the causal
//! context of every pixel into a hidden feature vector, and a mixture of
//! conditional Gaussian scale mixtures turns that summary into the per-pixel
//! conditional density. The joint log-density and its exact gradient with
//! respect to every pixel are both available, which is what the inference
//! engines build on:
//!
//! * [`recover::inpaint`] fills missing pixels by gradient ascent on the
//!   prior, holding observed pixels fixed.
//! * [`recover::cs_recover`] reconstructs an image from compressive linear
//!   measurements by projected gradient ascent (hard constraint `Φx = y`).
//! * [`recover::cs_recover_noisy`] handles noisy measurements with a soft
//!   quadratic data term instead of the projection.
//!
//! Sensing operators ([`sensing::MeasurementOperator`]) come in two flavors:
//! dense Gaussian with orthonormalized rows, and a subsampled fast
//! Walsh-Hadamard transform applied matrix-free.

pub mod error;
pub mod finite_diff;
pub mod grid;
pub mod hash;
pub mod imgio;
pub mod mask;
pub mod mcgsm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod recover;
pub mod rng;
pub mod sensing;
pub mod slstm;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Flip, Grid2D};
pub use rng::SeededRng;
