use serde::{Deserialize, Serialize};

use crate::error::{check_len, LabError, Result};
use crate::numerics::{AdamConfig, AdamState, NoiseSchedule, RngStream};
use crate::prompts::TokenMatrix;
use crate::teacher::Denoiser;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    /// Number of HiPer tokens `L2`.
    pub tokens: usize,
    pub iters: usize,
    pub lr: f64,
    /// `(t, ε)` pairs per Monte-Carlo gradient estimate.
    pub batch: usize,
    /// Size of the fixed batch used to report start and end loss.
    pub eval_batch: usize,
    pub init_scale: f64,
    /// Overrides the schedule's `[t_min, t_max]` sampling range.
    pub t_range: Option<(usize, usize)>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            tokens: 5,
            iters: 400,
            lr: 5e-3,
            batch: 8,
            eval_batch: 64,
            init_scale: 0.02,
            t_range: None,
        }
    }
}

impl InversionConfig {
    /// Iteration count used by the full-scale experiments.
    pub fn paper_preset() -> Self {
        Self {
            iters: 1400,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InversionResult {
    pub tokens: TokenMatrix,
    pub loss_trace: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

struct Pair {
    t: usize,
    noise: Vec<f64>,
}

fn draw_pairs(n: usize, dim: usize, range: (usize, usize), rng: &mut RngStream) -> Vec<Pair> {
    (0..n)
        .map(|_| Pair {
            t: rng.uniform_int(range.0 as i64, range.1 as i64) as usize,
            noise: rng.normal_vec(dim),
        })
        .collect()
}

/// Mean of `ω(t)²||ε̂(x_t, t, [y; h]) − ε||²` over `pairs`; when `grad` is
/// given, accumulates the gradient with respect to the pooled embedding.
fn objective<D: Denoiser + ?Sized>(
    teacher: &D,
    x_ref: &[f64],
    pooled: &[f64],
    pairs: &[Pair],
    schedule: &NoiseSchedule,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let tp = schedule.eval(p.t)?;
        let x_t: Vec<f64> = x_ref
            .iter()
            .zip(&p.noise)
            .map(|(x, e)| tp.alpha * x + tp.sigma * e)
            .collect();
        let w2 = tp.omega * tp.omega;
        match grad.as_deref_mut() {
            None => {
                let eps = teacher.predict_pooled(&x_t, tp, pooled)?;
                total += scale * w2 * eps.iter().zip(&p.noise).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            Some(g) => {
                // the cotangent depends on ε̂, so evaluate first and reuse it
                let eps = teacher.predict_pooled(&x_t, tp, pooled)?;
                let cot: Vec<f64> = eps.iter().zip(&p.noise).map(|(a, b)| 2.0 * scale * w2 * (a - b)).collect();
                total += scale * w2 * eps.iter().zip(&p.noise).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                let (_, gp) = teacher.predict_pooled_vjp(&x_t, tp, pooled, &cot)?;
                for (a, b) in g.iter_mut().zip(&gp) {
                    *a += b;
                }
            }
        }
    }
    Ok(total)
}

fn joint_pool(base_sum: &[f64], base_rows: usize, h: &TokenMatrix) -> Vec<f64> {
    let n = (base_rows + h.rows()) as f64;
    let hp = h.pool();
    base_sum
        .iter()
        .zip(&hp)
        .map(|(b, p)| (b + h.rows() as f64 * p) / n)
        .collect()
}

/// Optimize HiPer tokens `h` so that `[base; h]` reconstructs `x_ref` under
/// the teacher's denoising objective.
///
/// `base` is read only. Draws come from substreams of `rng`: token
/// initialization, per-iteration batches and the fixed evaluation batch use
/// separate streams.
pub fn invert_hiper<D: Denoiser + ?Sized>(
    teacher: &D,
    x_ref: &[f64],
    base: &TokenMatrix,
    config: &InversionConfig,
    rng: &RngStream,
    schedule: &NoiseSchedule,
) -> Result<InversionResult> {
    check_len("reference image", x_ref.len(), teacher.dim())?;
    check_len("base prompt width", base.dim(), teacher.embed_dim())?;
    if x_ref.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Validation("reference image has non-finite values".into()));
    }
    if config.tokens == 0 || config.batch == 0 || config.eval_batch == 0 {
        return Err(LabError::Validation("inversion needs tokens, batch and eval_batch >= 1".into()));
    }
    let range = config
        .t_range
        .unwrap_or((schedule.config().t_min, schedule.config().t_max));
    if range.0 < 1 || range.0 > range.1 || range.1 > schedule.n_steps() {
        return Err(LabError::Validation(format!("invalid inversion t range {range:?}")));
    }

    let dim = base.dim();
    let mut h = TokenMatrix::random(config.tokens, dim, config.init_scale, &mut rng.substream(0));
    let mut batch_rng = rng.substream(1);
    let eval_pairs = draw_pairs(config.eval_batch, teacher.dim(), range, &mut rng.substream(2));
    let base_sum: Vec<f64> = base.pool().iter().map(|v| v * base.rows() as f64).collect();
    let total_rows = (base.rows() + config.tokens) as f64;

    let initial_eval_loss = objective(teacher, x_ref, &joint_pool(&base_sum, base.rows(), &h), &eval_pairs, schedule, None)?;
    let mut adam = AdamState::new(config.tokens * dim, AdamConfig::with_lr(config.lr));
    let mut trace = Vec::with_capacity(config.iters);
    let mut grad_pooled = vec![0.0; dim];
    let mut grad = vec![0.0; config.tokens * dim];
    for iter in 0..config.iters {
        let pairs = draw_pairs(config.batch, teacher.dim(), range, &mut batch_rng);
        grad_pooled.iter_mut().for_each(|g| *g = 0.0);
        let pooled = joint_pool(&base_sum, base.rows(), &h);
        let loss = objective(teacher, x_ref, &pooled, &pairs, schedule, Some(&mut grad_pooled))?;
        if !loss.is_finite() {
            return Err(LabError::Optimization {
                iter,
                detail: format!("inversion loss = {loss}"),
            });
        }
        // every token row enters the pooled vector with weight 1 / (L1 + L2)
        for row in grad.chunks_mut(dim) {
            for (g, gp) in row.iter_mut().zip(&grad_pooled) {
                *g = gp / total_rows;
            }
        }
        adam.step(h.as_mut_slice(), &grad)?;
        trace.push(loss);
    }
    let final_eval_loss = objective(teacher, x_ref, &joint_pool(&base_sum, base.rows(), &h), &eval_pairs, schedule, None)?;
    Ok(InversionResult {
        tokens: h,
        loss_trace: trace,
        initial_eval_loss,
        final_eval_loss,
    })
}
