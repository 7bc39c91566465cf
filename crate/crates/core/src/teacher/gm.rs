use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, LabError, Result};
use crate::numerics::{dot, log_sum_exp, NoiseSchedule, RngStream, TimePoint};
use crate::prompts::TokenMatrix;
use crate::scenes::ImageShape;

/// One mixture component: an isotropic Gaussian in data space plus the
/// embedding-space anchor that controls its conditional weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: Vec<f64>,
    /// Per-component standard deviation; `0` is a point mass.
    pub s: f64,
    pub anchor: Vec<f64>,
}

/// Embedding-conditioned Gaussian-mixture diffusion prior.
///
/// Conditional weights are `w_k(e) = softmax_k(<anchor_k, pool(e)> / τ)`
/// where `pool` is the mean of the prompt's token rows. Under the forward
/// process `x_t = α_t x + σ_t ε` the noisy marginal stays a mixture with
/// variances `v_k = α_t² s_k² + σ_t²`, so the optimal noise predictor is
/// available in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmTeacher {
    pub dim: usize,
    pub embed_dim: usize,
    pub cond_temperature: f64,
    pub components: Vec<Component>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageShape>,
}

/// Noise prediction plus the responsibilities that produced it.
#[derive(Clone, Debug)]
pub struct EpsOutput {
    pub eps: Vec<f64>,
    pub responsibilities: Vec<f64>,
}

impl GmTeacher {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(LabError::Validation("teacher needs at least one component".into()));
        }
        if self.dim == 0 || self.embed_dim == 0 {
            return Err(LabError::Validation("teacher dim and embed_dim must be positive".into()));
        }
        if !(self.cond_temperature > 0.0 && self.cond_temperature.is_finite()) {
            return Err(LabError::Validation(format!(
                "conditioning temperature must be positive, got {}",
                self.cond_temperature
            )));
        }
        for (k, c) in self.components.iter().enumerate() {
            check_len(&format!("component {k} mean"), c.mean.len(), self.dim)?;
            check_len(&format!("component {k} anchor"), c.anchor.len(), self.embed_dim)?;
            if !(c.s >= 0.0 && c.s.is_finite()) {
                return Err(LabError::Validation(format!("component {k} has invalid s = {}", c.s)));
            }
            if c.mean.iter().chain(&c.anchor).any(|v| !v.is_finite()) {
                return Err(LabError::Validation(format!("component {k} has non-finite entries")));
            }
        }
        if let Some(img) = self.image {
            check_len("teacher image shape", img.len(), self.dim)?;
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Whether every component has positive spread (needed for classification).
    pub fn classifiable(&self) -> bool {
        self.components.iter().all(|c| c.s > 0.0)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn spec_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("teacher serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn check_pooled(&self, pooled: &[f64]) -> Result<()> {
        check_len("pooled embedding", pooled.len(), self.embed_dim)
    }

    /// Conditional log-weights `log w_k(e)` for a pooled embedding.
    pub fn log_weights(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        self.check_pooled(pooled)?;
        let mut logits: Vec<f64> = self
            .components
            .iter()
            .map(|c| dot(&c.anchor, pooled) / self.cond_temperature)
            .collect();
        let lse = log_sum_exp(&logits);
        for l in &mut logits {
            *l -= lse;
        }
        Ok(logits)
    }

    pub fn weights(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_weights(pooled)?.into_iter().map(f64::exp).collect())
    }

    pub fn prompt_weights(&self, prompt: &TokenMatrix) -> Result<Vec<f64>> {
        self.weights(&prompt.pool())
    }

    /// Log-responsibilities of the noisy marginal at `x_t`, and the per-component
    /// variances `v_k`.
    fn noisy_log_resp(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("x_t", x_t.len(), self.dim)?;
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Numeric("non-finite x_t passed to the teacher".into()));
        }
        let log_w = self.log_weights(pooled)?;
        let half_d = 0.5 * self.dim as f64;
        let mut var = Vec::with_capacity(self.components.len());
        let mut logits = Vec::with_capacity(self.components.len());
        for (c, lw) in self.components.iter().zip(&log_w) {
            let v = tp.alpha * tp.alpha * c.s * c.s + tp.sigma * tp.sigma;
            if !(v > 0.0) {
                return Err(LabError::Numeric(format!(
                    "zero marginal variance at t = {} (point mass at clean time)",
                    tp.t
                )));
            }
            let d2: f64 = x_t
                .iter()
                .zip(&c.mean)
                .map(|(x, m)| {
                    let r = x - tp.alpha * m;
                    r * r
                })
                .sum();
            logits.push(lw - 0.5 * d2 / v - half_d * v.ln());
            var.push(v);
        }
        let lse = log_sum_exp(&logits);
        if !lse.is_finite() {
            return Err(LabError::Numeric(format!(
                "all responsibilities underflowed at t = {}",
                tp.t
            )));
        }
        for l in &mut logits {
            *l -= lse;
        }
        Ok((logits, var))
    }

    /// Exact noise prediction `ε̂ = -σ_t ∇ log p_t(x_t | e)` for a pooled embedding.
    pub fn eps_pooled(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<EpsOutput> {
        Ok(self.eps_and_var(x_t, tp, pooled)?.0)
    }

    fn eps_and_var(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<(EpsOutput, Vec<f64>)> {
        let (log_r, var) = self.noisy_log_resp(x_t, tp, pooled)?;
        let resp: Vec<f64> = log_r.iter().map(|l| l.exp()).collect();
        let mut coef_x = 0.0;
        let mut eps = vec![0.0; self.dim];
        for ((c, r), v) in self.components.iter().zip(&resp).zip(&var) {
            if *r == 0.0 {
                continue;
            }
            let w = r / v;
            coef_x += w;
            let wm = -tp.alpha * w;
            for (e, m) in eps.iter_mut().zip(&c.mean) {
                *e += wm * m;
            }
        }
        for (e, x) in eps.iter_mut().zip(x_t) {
            *e = tp.sigma * (*e + coef_x * x);
        }
        let out = EpsOutput {
            eps,
            responsibilities: resp,
        };
        Ok((out, var))
    }

    pub fn eps(&self, x_t: &[f64], t: usize, prompt: &TokenMatrix, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let tp = schedule.eval(t)?;
        Ok(self.eps_pooled(x_t, tp, &prompt.pool())?.eps)
    }

    /// Noise prediction together with the gradient of `<cot, ε̂>` with respect
    /// to the pooled embedding.
    pub fn eps_pooled_vjp(
        &self,
        x_t: &[f64],
        tp: TimePoint,
        pooled: &[f64],
        cot: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("cotangent", cot.len(), self.dim)?;
        let (out, var) = self.eps_and_var(x_t, tp, pooled)?;
        let cx = dot(cot, x_t);
        // <cot, u_k> with u_k = (x_t - α μ_k) / v_k
        let cu: Vec<f64> = self
            .components
            .iter()
            .zip(&var)
            .map(|(c, v)| (cx - tp.alpha * dot(cot, &c.mean)) / v)
            .collect();
        let cu_bar: f64 = out.responsibilities.iter().zip(&cu).map(|(r, u)| r * u).sum();
        let mut grad = vec![0.0; self.embed_dim];
        for ((c, r), u) in self.components.iter().zip(&out.responsibilities).zip(&cu) {
            let dlogit = tp.sigma * r * (u - cu_bar) / self.cond_temperature;
            for (g, a) in grad.iter_mut().zip(&c.anchor) {
                *g += dlogit * a;
            }
        }
        Ok((out.eps, grad))
    }

    /// Log of the exact Bayes posterior over components at clean time.
    pub fn classify_log_pooled(&self, x: &[f64], pooled: &[f64]) -> Result<Vec<f64>> {
        check_len("classifier input", x.len(), self.dim)?;
        if !self.classifiable() {
            return Err(LabError::Validation(
                "classification needs every component to have s > 0".into(),
            ));
        }
        let log_w = self.log_weights(pooled)?;
        let d = self.dim as f64;
        let mut logits: Vec<f64> = self
            .components
            .iter()
            .zip(&log_w)
            .map(|(c, lw)| {
                let d2: f64 = x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
                lw - 0.5 * d2 / (c.s * c.s) - d * c.s.ln()
            })
            .collect();
        let lse = log_sum_exp(&logits);
        if !lse.is_finite() {
            return Err(LabError::Numeric("classifier logits are not finite".into()));
        }
        for l in &mut logits {
            *l -= lse;
        }
        Ok(logits)
    }

    pub fn classify_pooled(&self, x: &[f64], pooled: &[f64]) -> Result<Vec<f64>> {
        Ok(self.classify_log_pooled(x, pooled)?.into_iter().map(f64::exp).collect())
    }

    /// Posterior over components for a clean point under prompt `e`.
    pub fn classify(&self, x: &[f64], prompt: &TokenMatrix) -> Result<Vec<f64>> {
        self.classify_pooled(x, &prompt.pool())
    }

    /// Draw `n` exact samples from `p(x | e)`.
    pub fn sample_pooled(&self, pooled: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<(usize, Vec<f64>)>> {
        let w = self.weights(pooled)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.categorical(&w);
            let c = &self.components[k];
            let x: Vec<f64> = c.mean.iter().map(|m| m + c.s * rng.normal()).collect();
            out.push((k, x));
        }
        Ok(out)
    }

    pub fn sample(&self, prompt: &TokenMatrix, n: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(LabError::Validation("sample count must be >= 1".into()));
        }
        Ok(self
            .sample_pooled(&prompt.pool(), n, rng)?
            .into_iter()
            .map(|(_, x)| x)
            .collect())
    }

    /// Same means and anchors, each mean shifted by `scale * N(0, I)`.
    pub fn perturbed(&self, scale: f64, rng: &mut RngStream) -> Self {
        let mut t = self.clone();
        for c in &mut t.components {
            for m in &mut c.mean {
                *m += scale * rng.normal();
            }
        }
        t
    }
}
