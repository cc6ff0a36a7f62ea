//! PHANES: pseudo-healthy generative networks for anomaly segmentation.
//!
//! The pipeline has three stages. A latent generative network (a soft
//! introspective VAE with a reversed embedding similarity loss) learns the
//! healthy distribution and produces coarse reconstructions. Residual and
//! perceptual differences between input and coarse reconstruction are turned
//! into a calibrated binary mask of suspect regions. A mask-conditioned
//! inpainting network then replaces the masked regions with pseudo-healthy
//! content while every unmasked pixel is preserved bit-exactly, and the final
//! anomaly map is the residual times a perceptual distance map.
//!
//! Everything runs on the CPU in `f64` on top of a small tape-based reverse
//! mode autodiff engine ([`autograd`]), so training at desk scale is
//! reproducible bit-for-bit given a seed. See the `examples/` directory for
//! one runnable example per capability, and the `phanes` binary for the
//! staged experiment driver.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod inpaint;
pub mod io;
pub mod latent;
pub mod maskgen;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scoring;

pub use error::{PhanesError, Result};
pub use grid::{BinaryMask, Image, ScoreMap};
