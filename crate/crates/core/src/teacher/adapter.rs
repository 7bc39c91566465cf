use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::numerics::{RngStream, TimePoint};
use crate::teacher::{time_features, Activation, Denoiser, Mlp, TIME_FEATURES};

/// Camera embedding width: `(cos az, sin az, cos el, sin el)`.
pub const CAMERA_EMBED_DIM: usize = 4;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub hidden: Vec<usize>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64] }
    }
}

/// Residual correction network: `ε_φ = ε_teacher + r(x_t, t, c, pool(y))`.
///
/// This is the weight-space domain adapter of VSD. The final layer starts at
/// zero so the adapted predictor initially equals the teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualAdapter {
    dim: usize,
    embed_dim: usize,
    net: Mlp,
}

/// Adapter forward result retaining what the parameter gradient needs.
pub struct AdapterEval {
    pub eps: Vec<f64>,
    pub residual: Vec<f64>,
    trace: crate::teacher::MlpTrace,
}

impl ResidualAdapter {
    pub fn new(dim: usize, embed_dim: usize, config: &AdapterConfig, rng: &mut RngStream) -> Self {
        let mut sizes = vec![dim + TIME_FEATURES + CAMERA_EMBED_DIM + embed_dim];
        sizes.extend(&config.hidden);
        sizes.push(dim);
        Self {
            dim,
            embed_dim,
            net: Mlp::new(&sizes, Activation::Silu, true, rng),
        }
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn input(&self, x_t: &[f64], tp: TimePoint, camera: &[f64], pooled: &[f64]) -> Result<Vec<f64>> {
        check_len("adapter x_t", x_t.len(), self.dim)?;
        check_len("camera embedding", camera.len(), CAMERA_EMBED_DIM)?;
        check_len("adapter pooled embedding", pooled.len(), self.embed_dim)?;
        let mut v = Vec::with_capacity(self.net.input_dim());
        v.extend_from_slice(x_t);
        v.extend_from_slice(&time_features(tp));
        v.extend_from_slice(camera);
        v.extend_from_slice(pooled);
        Ok(v)
    }

    /// `ε_φ(x_t, t, c, y)` given the base teacher and the pooled prompt.
    pub fn eval<D: Denoiser + ?Sized>(
        &self,
        teacher: &D,
        x_t: &[f64],
        tp: TimePoint,
        camera: &[f64],
        pooled: &[f64],
    ) -> Result<AdapterEval> {
        let base = teacher.predict_pooled(x_t, tp, pooled)?;
        self.eval_with_base(base, x_t, tp, camera, pooled)
    }

    /// Same as [`eval`](Self::eval) with a precomputed teacher prediction.
    pub fn eval_with_base(
        &self,
        base: Vec<f64>,
        x_t: &[f64],
        tp: TimePoint,
        camera: &[f64],
        pooled: &[f64],
    ) -> Result<AdapterEval> {
        check_len("teacher prediction", base.len(), self.dim)?;
        let trace = self.net.forward_trace(&self.input(x_t, tp, camera, pooled)?)?;
        let residual = self.net.output(&trace).to_vec();
        let eps = base.iter().zip(&residual).map(|(b, r)| b + r).collect();
        Ok(AdapterEval {
            eps,
            residual,
            trace,
        })
    }

    /// Gradient of `<cot, ε_φ>` with respect to the adapter parameters.
    pub fn param_grad(&self, eval: &AdapterEval, cot: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.n_params()];
        self.net.backward(&eval.trace, cot, &mut g)?;
        Ok(g)
    }
}
