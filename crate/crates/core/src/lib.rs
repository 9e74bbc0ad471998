//! Quantitative toolkit for mobile bokeh rendering.
//!
//! The crate is organised around a planar floating-point [`Image`] and the
//! modules that consume it:
//!
//! - [`image`]: raster type, PNG I/O and shared spatial primitives.
//! - [`metrics`]: PSNR, SSIM, MS-SSIM and the fidelity/runtime score.
//! - [`loss`]: bokeh-specific losses with analytic gradients and a
//!   finite-difference checker.
//! - [`render`]: classical disparity-guided bokeh synthesis.
//! - [`tinynet`]: forward engine for a tiny U-Net with a portable weight file.
//! - [`prep`]: pair discovery, alignment, overlap cropping and downscaling.
//! - [`harness`]: batch evaluation, runtime benchmarking, leaderboards and
//!   gradient-check reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod prep;
pub mod render;
pub mod tinynet;

pub use error::{Error, Result};
pub use image::{Image, Kernel2D, Rect};
pub use loss::{LossContext, LossTerm, LossWeights, SaliencyMask, SobelDirection};
pub use metrics::{LeaderboardRow, SsimParams};
pub use prep::PairManifest;
pub use render::{DisparityMap, RadiusMap, RenderParams};
pub use tinynet::{NetSpec, Tensor, WeightStore};
