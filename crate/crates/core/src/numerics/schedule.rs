use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::RngStream;

/// Time-dependent loss weighting `ω(t)`.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Weighting {
    /// `ω(t) = σ_t²`.
    #[default]
    SigmaSquared,
    /// `ω(t) = 1`.
    Unit,
    Constant(f64),
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub n_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub weighting: Weighting,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            n_steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            t_min: 20,
            t_max: 980,
            weighting: Weighting::SigmaSquared,
        }
    }
}

/// `(α_t, σ_t, ω(t))` at one timestep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimePoint {
    pub t: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub omega: f64,
}

/// Discrete variance-preserving DDPM schedule with linear β.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    // index 0 holds ᾱ_0 = 1 (clean data)
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        if config.n_steps == 0 {
            return Err(LabError::Validation("schedule needs n_steps >= 1".into()));
        }
        if !(config.beta_min > 0.0 && config.beta_max < 1.0 && config.beta_min <= config.beta_max) {
            return Err(LabError::Validation(format!(
                "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{}, {}]",
                config.beta_min, config.beta_max
            )));
        }
        if config.t_min < 1 || config.t_min > config.t_max || config.t_max > config.n_steps {
            return Err(LabError::Validation(format!(
                "sampling bounds [{}, {}] must lie inside [1, {}]",
                config.t_min, config.t_max, config.n_steps
            )));
        }
        if let Weighting::Constant(c) = config.weighting {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(LabError::Validation(format!("constant weighting must be finite and >= 0, got {c}")));
            }
        }
        let n = config.n_steps;
        let mut alpha_bar = Vec::with_capacity(n + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for s in 1..=n {
            let frac = if n == 1 { 0.0 } else { (s - 1) as f64 / (n - 1) as f64 };
            let beta = config.beta_min + (config.beta_max - config.beta_min) * frac;
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        Ok(Self { config, alpha_bar })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn n_steps(&self) -> usize {
        self.config.n_steps
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| LabError::Range(format!("timestep {t} outside [0, {}]", self.config.n_steps)))
    }

    /// `(α_t, σ_t, ω(t))` for `1 <= t <= n_steps`.
    pub fn eval(&self, t: usize) -> Result<TimePoint> {
        if t < 1 || t > self.config.n_steps {
            return Err(LabError::Range(format!(
                "timestep {t} outside [1, {}]",
                self.config.n_steps
            )));
        }
        Ok(self.point(t))
    }

    /// Like [`eval`](Self::eval) but also accepts `t = 0` (α = 1, σ = 0), the
    /// terminal point of a sampler.
    pub fn eval_or_clean(&self, t: usize) -> Result<TimePoint> {
        if t > self.config.n_steps {
            return Err(LabError::Range(format!(
                "timestep {t} outside [0, {}]",
                self.config.n_steps
            )));
        }
        Ok(self.point(t))
    }

    fn point(&self, t: usize) -> TimePoint {
        let ab = self.alpha_bar[t];
        let alpha = ab.sqrt();
        let sigma = (1.0 - ab).sqrt();
        let omega = match self.config.weighting {
            Weighting::SigmaSquared => sigma * sigma,
            Weighting::Unit => 1.0,
            Weighting::Constant(c) => c,
        };
        TimePoint {
            t,
            alpha,
            sigma,
            omega,
        }
    }

    /// Uniform integer timestep in `[t_min, t_max]`.
    pub fn sample_t(&self, rng: &mut RngStream) -> usize {
        rng.uniform_int(self.config.t_min as i64, self.config.t_max as i64) as usize
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(ScheduleConfig::default()).expect("default schedule is valid")
    }
}
