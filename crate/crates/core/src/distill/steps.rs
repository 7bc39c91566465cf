use serde::{Deserialize, Serialize};

use crate::error::{check_len, LabError, Result};
use crate::numerics::{norm, AdamState, NoiseSchedule, RngStream, TimePoint};
use crate::prompts::TokenMatrix;
use crate::scenes::{sample_camera, Camera, CameraConfig, RenderConfig, Renderable};
use crate::teacher::{AdapterEval, Denoiser, ResidualAdapter, Teacher};

/// Everything a step reads but never mutates.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub teacher: &'a Teacher,
    pub schedule: &'a NoiseSchedule,
    pub render: &'a RenderConfig,
    pub camera: &'a CameraConfig,
}

/// One Monte-Carlo draw `(t, ε, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub tp: TimePoint,
    pub noise: Vec<f64>,
    pub camera: Camera,
}

/// Draws `t`, then `ε`, then the camera, always in that order.
pub fn draw(ctx: &StepContext, rng: &mut RngStream) -> Result<Draw> {
    let tp = ctx.schedule.eval(ctx.schedule.sample_t(rng))?;
    let noise = rng.normal_vec(ctx.render.image.len());
    let camera = sample_camera(rng, ctx.camera);
    Ok(Draw { tp, noise, camera })
}

fn noised(x0: &[f64], d: &Draw) -> Vec<f64> {
    x0.iter()
        .zip(&d.noise)
        .map(|(x, e)| d.tp.alpha * x + d.tp.sigma * e)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub t: usize,
    pub grad_norm: f64,
    /// Loss of the variational model's own update, when it trained.
    pub model_loss: Option<f64>,
}

fn check_teacher(ctx: &StepContext, prompt: &TokenMatrix) -> Result<()> {
    if ctx.teacher.dim() != ctx.render.image.len() {
        return Err(LabError::Validation(format!(
            "teacher dim {} differs from render dim {}",
            ctx.teacher.dim(),
            ctx.render.image.len()
        )));
    }
    check_len("prompt width", prompt.dim(), ctx.teacher.embed_dim())
}

fn finite_direction(dir: &[f64], eps_hat: &[f64], tp: TimePoint) -> Result<()> {
    if dir.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Numeric(format!(
            "non-finite particle gradient at t = {}, |eps_hat| = {}",
            tp.t,
            norm(eps_hat)
        )))
    }
}

/// Pull an image-space direction back to the scene parameters and take an
/// Adam step. Returns the gradient norm.
fn apply<S: Renderable>(scene: &mut S, adam: &mut AdamState, ctx: &StepContext, camera: &Camera, dir: &[f64]) -> Result<f64> {
    let grad = scene.render_vjp(camera, ctx.render, dir)?;
    adam.step(scene.params_mut(), &grad)?;
    Ok(norm(&grad))
}

/// Score distillation: image-space gradient `ω(t)(ε̂(x_t, t, y) − ε)`, with
/// the teacher's input Jacobian omitted.
pub fn sds_step<S: Renderable>(
    ctx: &StepContext,
    scene: &mut S,
    adam: &mut AdamState,
    prompt: &TokenMatrix,
    rng: &mut RngStream,
) -> Result<StepReport> {
    check_teacher(ctx, prompt)?;
    let d = draw(ctx, rng)?;
    let x_t = noised(&scene.render(&d.camera, ctx.render)?, &d);
    let eps_hat = ctx.teacher.predict_pooled(&x_t, d.tp, &prompt.pool())?;
    let dir: Vec<f64> = eps_hat
        .iter()
        .zip(&d.noise)
        .map(|(e, n)| d.tp.omega * (e - n))
        .collect();
    finite_direction(&dir, &eps_hat, d.tp)?;
    let grad_norm = apply(scene, adam, ctx, &d.camera, &dir)?;
    Ok(StepReport {
        t: d.tp.t,
        grad_norm,
        model_loss: None,
    })
}

/// The second noise predictor in a variational gradient
/// `ω(t)(ε̂(x_t, t, y_i) − ε_model)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariationalModel {
    /// Exact denoiser of a point mass at the current render: it returns the
    /// injected noise, so the variational gradient is the score-distillation
    /// gradient.
    Dirac,
    /// Weight-space adapter `ε_φ = ε̂ + r_φ(x_t, t, c, y_i)`.
    Residual { adapter: ResidualAdapter, adam: AdamState },
    /// Shared learnable tokens: `ε_model = ε̂(x_t, t, [y_i; φ])`.
    SharedTokens { tokens: TokenMatrix, adam: AdamState },
}

enum Cache {
    None,
    Residual(AdapterEval),
    Shared { pooled: Vec<f64>, rows: usize },
}

struct Prediction {
    eps: Vec<f64>,
    cache: Cache,
}

impl VariationalModel {
    pub fn n_params(&self) -> usize {
        match self {
            VariationalModel::Dirac => 0,
            VariationalModel::Residual { adapter, .. } => adapter.n_params(),
            VariationalModel::SharedTokens { tokens, .. } => tokens.as_slice().len(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            VariationalModel::Dirac => &[],
            VariationalModel::Residual { adapter, .. } => adapter.params(),
            VariationalModel::SharedTokens { tokens, .. } => tokens.as_slice(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            VariationalModel::Dirac => &mut [],
            VariationalModel::Residual { adapter, .. } => adapter.params_mut(),
            VariationalModel::SharedTokens { tokens, .. } => tokens.as_mut_slice(),
        }
    }

    pub fn adam(&self) -> Option<&AdamState> {
        match self {
            VariationalModel::Dirac => None,
            VariationalModel::Residual { adam, .. } | VariationalModel::SharedTokens { adam, .. } => Some(adam),
        }
    }

    pub fn adam_mut(&mut self) -> Option<&mut AdamState> {
        match self {
            VariationalModel::Dirac => None,
            VariationalModel::Residual { adam, .. } | VariationalModel::SharedTokens { adam, .. } => Some(adam),
        }
    }

    /// `ω(t)·mean((ε_model − ε)²)` for a render `x0` under draw `d`.
    pub fn loss(&self, ctx: &StepContext, x0: &[f64], d: &Draw, prompt: &TokenMatrix) -> Result<f64> {
        let x_t = noised(x0, d);
        let pred = self.predict(ctx, &x_t, d, prompt, None)?;
        let sq: f64 = pred.eps.iter().zip(&d.noise).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(d.tp.omega * sq / d.noise.len() as f64)
    }

    /// One model-only update on a fixed render and draw; returns the loss before the step.
    pub fn fit_step(&mut self, ctx: &StepContext, x0: &[f64], d: &Draw, prompt: &TokenMatrix) -> Result<f64> {
        let x_t = noised(x0, d);
        let pred = self.predict(ctx, &x_t, d, prompt, None)?;
        self.update(ctx, &x_t, d, pred)
    }

    fn predict(&self, ctx: &StepContext, x_t: &[f64], d: &Draw, prompt: &TokenMatrix, base: Option<&[f64]>) -> Result<Prediction> {
        match self {
            VariationalModel::Dirac => Ok(Prediction {
                eps: d.noise.clone(),
                cache: Cache::None,
            }),
            VariationalModel::Residual { adapter, .. } => {
                let pooled = prompt.pool();
                let base = match base {
                    Some(b) => b.to_vec(),
                    None => ctx.teacher.predict_pooled(x_t, d.tp, &pooled)?,
                };
                let ev = adapter.eval_with_base(base, x_t, d.tp, &d.camera.embedding(), &pooled)?;
                Ok(Prediction {
                    eps: ev.eps.clone(),
                    cache: Cache::Residual(ev),
                })
            }
            VariationalModel::SharedTokens { tokens, .. } => {
                let joint = TokenMatrix::concat(&[prompt, tokens])?;
                let pooled = joint.pool();
                Ok(Prediction {
                    eps: ctx.teacher.predict_pooled(x_t, d.tp, &pooled)?,
                    cache: Cache::Shared {
                        pooled,
                        rows: joint.rows(),
                    },
                })
            }
        }
    }

    /// One Adam step on `ω(t)·mean((ε_model − ε)²)`; returns the loss.
    fn update(&mut self, ctx: &StepContext, x_t: &[f64], d: &Draw, pred: Prediction) -> Result<f64> {
        let dim = d.noise.len() as f64;
        let diff: Vec<f64> = pred.eps.iter().zip(&d.noise).map(|(a, b)| a - b).collect();
        let loss = d.tp.omega * diff.iter().map(|v| v * v).sum::<f64>() / dim;
        let cot: Vec<f64> = diff.iter().map(|v| 2.0 * d.tp.omega * v / dim).collect();
        match (self, pred.cache) {
            (VariationalModel::Dirac, _) => {}
            (VariationalModel::Residual { adapter, adam }, Cache::Residual(ev)) => {
                let g = adapter.param_grad(&ev, &cot)?;
                adam.step(adapter.params_mut(), &g)?;
            }
            (VariationalModel::SharedTokens { tokens, adam }, Cache::Shared { pooled, rows }) => {
                let (_, gp) = ctx.teacher.predict_pooled_vjp(x_t, d.tp, &pooled, &cot)?;
                // every row of [y_i; φ] enters the pooled vector with weight 1 / rows
                let g: Vec<f64> = (0..tokens.rows()).flat_map(|_| gp.iter().map(|v| v / rows as f64)).collect();
                adam.step(tokens.as_mut_slice(), &g)?;
            }
            _ => unreachable!("prediction cache always matches the model variant"),
        }
        if !loss.is_finite() {
            return Err(LabError::Numeric(format!("non-finite adapter loss at t = {}", d.tp.t)));
        }
        Ok(loss)
    }
}

/// Image-space direction `ω(t)(ε̂(x_t, t, y_i) − ε_model)` for a given draw,
/// together with the render it was computed from.
pub fn variational_direction<S: Renderable>(
    ctx: &StepContext,
    scene: &S,
    model: &VariationalModel,
    prompt: &TokenMatrix,
    d: &Draw,
) -> Result<Vec<f64>> {
    check_teacher(ctx, prompt)?;
    let x_t = noised(&scene.render(&d.camera, ctx.render)?, d);
    Ok(direction(ctx, model, prompt, &x_t, d)?.0)
}

fn direction(ctx: &StepContext, model: &VariationalModel, prompt: &TokenMatrix, x_t: &[f64], d: &Draw) -> Result<(Vec<f64>, Prediction)> {
    let eps_hat = ctx.teacher.predict_pooled(x_t, d.tp, &prompt.pool())?;
    let pred = model.predict(ctx, x_t, d, prompt, Some(&eps_hat))?;
    let dir: Vec<f64> = eps_hat
        .iter()
        .zip(&pred.eps)
        .map(|(a, b)| d.tp.omega * (a - b))
        .collect();
    finite_direction(&dir, &eps_hat, d.tp)?;
    Ok((dir, pred))
}

/// Variational step shared by VSD and TSD: one particle update from the
/// difference of the teacher and the variational model, then (when `train`)
/// one model update on the detached render.
///
/// The model update reuses the particle's `(t, ε)` unless `fresh_draw`, in
/// which case a new `(t, ε)` is drawn from `rng` for the same render.
pub fn variational_step<S: Renderable>(
    ctx: &StepContext,
    scene: &mut S,
    adam: &mut AdamState,
    model: &mut VariationalModel,
    prompt: &TokenMatrix,
    rng: &mut RngStream,
    train: bool,
    fresh_draw: bool,
) -> Result<StepReport> {
    check_teacher(ctx, prompt)?;
    let d = draw(ctx, rng)?;
    let x0 = scene.render(&d.camera, ctx.render)?;
    let x_t = noised(&x0, &d);
    let (dir, pred) = direction(ctx, model, prompt, &x_t, &d)?;
    let grad_norm = apply(scene, adam, ctx, &d.camera, &dir)?;
    let model_loss = if train && !matches!(model, VariationalModel::Dirac) {
        Some(if fresh_draw {
            let tp = ctx.schedule.eval(ctx.schedule.sample_t(rng))?;
            let fresh = Draw {
                tp,
                noise: rng.normal_vec(x0.len()),
                camera: d.camera,
            };
            let x_t = noised(&x0, &fresh);
            let pred = model.predict(ctx, &x_t, &fresh, prompt, None)?;
            model.update(ctx, &x_t, &fresh, pred)?
        } else {
            model.update(ctx, &x_t, &d, pred)?
        })
    } else {
        None
    };
    Ok(StepReport {
        t: d.tp.t,
        grad_norm,
        model_loss,
    })
}

/// `K` prompts `[y; z_i]` with fixed random token blocks `z_i`.
pub fn random_token_augmentation(
    base: &TokenMatrix,
    k: usize,
    rows: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Result<Vec<TokenMatrix>> {
    if k == 0 || rows == 0 {
        return Err(LabError::Validation("augmentation needs k >= 1 and rows >= 1".into()));
    }
    (0..k)
        .map(|_| {
            let z = TokenMatrix::random(rows, base.dim(), scale, rng);
            TokenMatrix::concat(&[base, &z])
        })
        .collect()
}
