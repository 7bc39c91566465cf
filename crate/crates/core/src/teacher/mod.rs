//! Diffusion priors: the exact Gaussian-mixture teacher, its residual
//! domain adapter, a trained MLP stand-in, and DDIM sampling.

mod adapter;
mod ddim;
mod gm;
mod mlp;
mod mlp_teacher;
mod presets;

pub use adapter::{AdapterConfig, AdapterEval, ResidualAdapter, CAMERA_EMBED_DIM};
pub use ddim::ddim_sample;
pub use gm::{Component, EpsOutput, GmTeacher};
pub use mlp::{Activation, Mlp, MlpTrace};
pub use mlp_teacher::{mlp_teacher_train, MlpTeacher, MlpTrainConfig, MlpTrainReport};
pub use presets::{bench_teacher, single_mode_teacher, TeacherGeometry};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::TimePoint;

/// Width of [`time_features`].
pub const TIME_FEATURES: usize = 8;

/// Smooth noise-level features shared by the learned networks.
pub fn time_features(tp: TimePoint) -> [f64; TIME_FEATURES] {
    let s2 = tp.sigma * tp.sigma;
    let pi = std::f64::consts::PI;
    [
        tp.alpha,
        tp.sigma,
        (pi * s2).sin(),
        (pi * s2).cos(),
        (2.0 * pi * s2).sin(),
        (2.0 * pi * s2).cos(),
        (4.0 * pi * s2).sin(),
        (4.0 * pi * s2).cos(),
    ]
}

/// A noise predictor conditioned on a pooled prompt embedding.
pub trait Denoiser {
    fn dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn predict_pooled(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<Vec<f64>>;

    /// Prediction plus the gradient of `<cot, ε̂>` with respect to the pooled
    /// embedding. The input `x_t` is treated as a constant.
    fn predict_pooled_vjp(
        &self,
        x_t: &[f64],
        tp: TimePoint,
        pooled: &[f64],
        cot: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl Denoiser for GmTeacher {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn predict_pooled(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eps_pooled(x_t, tp, pooled)?.eps)
    }

    fn predict_pooled_vjp(
        &self,
        x_t: &[f64],
        tp: TimePoint,
        pooled: &[f64],
        cot: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.eps_pooled_vjp(x_t, tp, pooled, cot)
    }
}

/// Any teacher kind that can be loaded from disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Teacher {
    Gm(GmTeacher),
    Mlp(MlpTeacher),
}

impl Teacher {
    /// SHA-256 of the canonical JSON serialization.
    pub fn spec_hash(&self) -> String {
        match self {
            Teacher::Gm(g) => g.spec_hash(),
            Teacher::Mlp(_) => {
                let bytes = serde_json::to_vec(self).expect("teacher serializes");
                crate::persist::sha256_hex(&bytes)
            }
        }
    }

    pub fn as_gm(&self) -> Option<&GmTeacher> {
        match self {
            Teacher::Gm(g) => Some(g),
            Teacher::Mlp(_) => None,
        }
    }
}

impl Denoiser for Teacher {
    fn dim(&self) -> usize {
        match self {
            Teacher::Gm(g) => g.dim,
            Teacher::Mlp(m) => m.dim(),
        }
    }

    fn embed_dim(&self) -> usize {
        match self {
            Teacher::Gm(g) => g.embed_dim,
            Teacher::Mlp(m) => m.embed_dim(),
        }
    }

    fn predict_pooled(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<Vec<f64>> {
        match self {
            Teacher::Gm(g) => g.predict_pooled(x_t, tp, pooled),
            Teacher::Mlp(m) => m.predict_pooled(x_t, tp, pooled),
        }
    }

    fn predict_pooled_vjp(
        &self,
        x_t: &[f64],
        tp: TimePoint,
        pooled: &[f64],
        cot: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Teacher::Gm(g) => g.predict_pooled_vjp(x_t, tp, pooled, cot),
            Teacher::Mlp(m) => m.predict_pooled_vjp(x_t, tp, pooled, cot),
        }
    }
}
