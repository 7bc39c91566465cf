use crate::error::{check_len, LabError, Result};
use crate::numerics::{NoiseSchedule, RngStream};
use crate::teacher::Denoiser;

/// Deterministic DDIM sampling from `x_T ~ N(0, I)` down to clean time.
///
/// Visits `steps + 1` evenly spaced timesteps from `n_steps` to `0`; each
/// update predicts `x̂₀ = (x_t − σ_t ε̂) / α_t` and re-noises it to the next
/// level with the same `ε̂`.
pub fn ddim_sample<D: Denoiser + ?Sized>(
    teacher: &D,
    pooled: &[f64],
    steps: usize,
    rng: &mut RngStream,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(LabError::Validation("ddim needs at least one step".into()));
    }
    check_len("ddim pooled embedding", pooled.len(), teacher.embed_dim())?;
    let n = schedule.n_steps();
    let times: Vec<usize> = (0..=steps)
        .map(|i| ((n as f64) * (steps - i) as f64 / steps as f64).round() as usize)
        .collect();
    let mut x = rng.normal_vec(teacher.dim());
    for w in times.windows(2) {
        let (t, next) = (w[0], w[1]);
        let tp = schedule.eval(t)?;
        let eps = teacher.predict_pooled(&x, tp, pooled)?;
        let tn = schedule.eval_or_clean(next)?;
        for (xi, e) in x.iter_mut().zip(&eps) {
            let x0 = (*xi - tp.sigma * e) / tp.alpha;
            *xi = tn.alpha * x0 + tn.sigma * e;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Numeric(format!("ddim produced a non-finite value at t = {t}")));
        }
    }
    Ok(x)
}
