//! A desk-scale laboratory for sampling-by-optimization text-to-3D methods.
//!
//! Score Distillation Sampling (SDS), Variational Score Distillation (VSD) and
//! Textual Score Distillation (TSD: per-particle inverted prompt tokens plus a
//! block of shared learnable tokens) are run against an analytic
//! Gaussian-mixture diffusion prior whose noise predictor and classifier are
//! exact. Every quantity the optimizers consume can therefore be checked
//! against an independent oracle.
//!
//! Module map:
//!
//! - [`numerics`]: counter-based RNG, DDPM schedule, Adam, entropy/cosine,
//!   finite-difference oracle.
//! - [`teacher`]: Gaussian-mixture prior, residual adapter, trained MLP
//!   denoiser, DDIM sampling.
//! - [`prompts`]: token matrices, concatenation, HiPer-token inversion,
//!   reference sets.
//! - [`scenes`]: image grids, voxel radiance fields, grid+MLP fields, cameras,
//!   rendering with exact reverse-mode gradients.
//! - [`distill`]: the SDS / VSD / TSD update steps and the run driver.
//! - [`metrics`]: IQ, IV and pairwise cosine similarity.
//! - [`probes`]: midpoint-convexity probes.
//! - [`persist`]: JSON, flat-binary checkpoint and PPM file formats.

pub mod distill;
pub mod error;
pub mod metrics;
pub mod numerics;
mod par;
pub mod persist;
pub mod probes;
pub mod prompts;
pub mod scenes;
pub mod teacher;

pub use error::{LabError, Result};
