use serde::{Deserialize, Serialize};

use crate::error::{check_len, LabError, Result};
use crate::numerics::{AdamConfig, AdamState, NoiseSchedule, RngStream, TimePoint};
use crate::teacher::{time_features, Activation, Denoiser, Mlp, TIME_FEATURES};

/// Learned noise predictor `ε̂(x_t, t, pool(y))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTeacher {
    dim: usize,
    embed_dim: usize,
    net: Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpTrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of the sample set held out for the reported loss.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Silu,
            iters: 2000,
            batch: 32,
            lr: 2e-3,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpTrainReport {
    pub initial_holdout_loss: f64,
    pub final_holdout_loss: f64,
    pub loss_trace: Vec<f64>,
}

impl MlpTeacher {
    pub fn new(dim: usize, embed_dim: usize, hidden: &[usize], activation: Activation, rng: &mut RngStream) -> Self {
        let mut sizes = vec![dim + TIME_FEATURES + embed_dim];
        sizes.extend(hidden);
        sizes.push(dim);
        Self {
            dim,
            embed_dim,
            net: Mlp::new(&sizes, activation, false, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn input(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<Vec<f64>> {
        check_len("mlp teacher x_t", x_t.len(), self.dim)?;
        check_len("mlp teacher pooled embedding", pooled.len(), self.embed_dim)?;
        let mut v = Vec::with_capacity(self.net.input_dim());
        v.extend_from_slice(x_t);
        v.extend_from_slice(&time_features(tp));
        v.extend_from_slice(pooled);
        Ok(v)
    }
}

impl Denoiser for MlpTeacher {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn predict_pooled(&self, x_t: &[f64], tp: TimePoint, pooled: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.input(x_t, tp, pooled)?)
    }

    fn predict_pooled_vjp(
        &self,
        x_t: &[f64],
        tp: TimePoint,
        pooled: &[f64],
        cot: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.net.forward_trace(&self.input(x_t, tp, pooled)?)?;
        let mut scratch = vec![0.0; self.net.n_params()];
        let input_grad = self.net.backward(&trace, cot, &mut scratch)?;
        let tail = input_grad[self.dim + TIME_FEATURES..].to_vec();
        Ok((self.net.output(&trace).to_vec(), tail))
    }
}

struct Draw {
    index: usize,
    t: usize,
    noise: Vec<f64>,
}

fn batch_loss(
    model: &MlpTeacher,
    data: &[Vec<f64>],
    draws: &[Draw],
    pooled: &[f64],
    schedule: &NoiseSchedule,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let mut total = 0.0;
    let scale = 1.0 / draws.len() as f64;
    let mut grad = grad;
    for d in draws {
        let tp = schedule.eval(d.t)?;
        let x_t: Vec<f64> = data[d.index]
            .iter()
            .zip(&d.noise)
            .map(|(x, e)| tp.alpha * x + tp.sigma * e)
            .collect();
        let trace = model.net.forward_trace(&model.input(&x_t, tp, pooled)?)?;
        let out = model.net.output(&trace);
        let resid: Vec<f64> = out.iter().zip(&d.noise).map(|(p, e)| p - e).collect();
        total += scale * resid.iter().map(|r| r * r).sum::<f64>();
        if let Some(g) = grad.as_deref_mut() {
            let cot: Vec<f64> = resid.iter().map(|r| 2.0 * scale * r).collect();
            model.net.backward(&trace, &cot, g)?;
        }
    }
    Ok(total)
}

fn draw_batch(n: usize, data_len: usize, dim: usize, schedule: &NoiseSchedule, rng: &mut RngStream) -> Vec<Draw> {
    (0..n)
        .map(|_| Draw {
            index: rng.index(data_len),
            t: rng.uniform_int(1, schedule.n_steps() as i64) as usize,
            noise: rng.normal_vec(dim),
        })
        .collect()
}

/// Fit an [`MlpTeacher`] to a sample set by minimizing `E||ε̂ − ε||²`.
///
/// All samples share the conditioning `pooled`. The holdout batch is built
/// from samples never seen during training.
pub fn mlp_teacher_train(
    samples: &[Vec<f64>],
    pooled: &[f64],
    schedule: &NoiseSchedule,
    config: &MlpTrainConfig,
) -> Result<(MlpTeacher, MlpTrainReport)> {
    if samples.len() < 1000 {
        return Err(LabError::Validation(format!(
            "need at least 1000 training samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    for s in samples {
        check_len("training sample", s.len(), dim)?;
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) || config.batch == 0 {
        return Err(LabError::Validation("invalid holdout fraction or batch size".into()));
    }
    let root = RngStream::new(config.seed, 0x6d6c_7074);
    let mut model = MlpTeacher::new(dim, pooled.len(), &config.hidden, config.activation, &mut root.substream(0));
    let n_hold = ((samples.len() as f64 * config.holdout_fraction) as usize).max(1);
    let (train, hold) = samples.split_at(samples.len() - n_hold);
    let hold_draws = draw_batch(256, hold.len(), dim, schedule, &mut root.substream(1));

    let initial = batch_loss(&model, hold, &hold_draws, pooled, schedule, None)?;
    let mut adam = AdamState::new(model.net.n_params(), AdamConfig::with_lr(config.lr));
    let mut rng = root.substream(2);
    let mut trace = Vec::with_capacity(config.iters);
    let mut grad = vec![0.0; model.net.n_params()];
    for iter in 0..config.iters {
        let draws = draw_batch(config.batch, train.len(), dim, schedule, &mut rng);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = batch_loss(&model, train, &draws, pooled, schedule, Some(&mut grad))?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(LabError::Training {
                iter,
                detail: format!("loss = {loss}"),
            });
        }
        adam.step(model.net.params_mut(), &grad)?;
        trace.push(loss);
    }
    let final_loss = batch_loss(&model, hold, &hold_draws, pooled, schedule, None)?;
    Ok((
        model,
        MlpTrainReport {
            initial_holdout_loss: initial,
            final_holdout_loss: final_loss,
            loss_trace: trace,
        },
    ))
}
