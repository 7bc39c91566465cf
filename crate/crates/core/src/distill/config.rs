use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::metrics::{Extractor, DEFAULT_VIEWS};
use crate::numerics::ScheduleConfig;
use crate::prompts::InversionConfig;
use crate::scenes::{CameraConfig, CameraMode, RenderConfig};
use crate::teacher::AdapterConfig;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sds,
    Vsd,
    Tsd,
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::Sds => "sds",
            Method::Vsd => "vsd",
            Method::Tsd => "tsd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sds" => Ok(Method::Sds),
            "vsd" => Ok(Method::Vsd),
            "tsd" => Ok(Method::Tsd),
            other => Err(LabError::Validation(format!("method must be one of sds|vsd|tsd, got {other:?}"))),
        }
    }
}

/// Per-particle prompt augmentation.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    /// Inverted reference tokens `[y; h*_i]`.
    Hiper,
    /// Fixed random token blocks `[y; z_i]`.
    RandomTokens,
}

/// What plays the role of the particle distribution's own noise predictor.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    /// No learned model (SDS).
    None,
    Residual,
    SharedTokens,
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Image,
    Voxel,
    Field,
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub kind: SceneKind,
    /// Standard deviation of the initial logits.
    pub init_scale: f64,
    pub voxel_resolution: usize,
    /// Mean initial density logit for volume scenes.
    pub density_init: f64,
    pub field_features: usize,
    pub field_hidden: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            kind: SceneKind::Image,
            init_scale: 0.1,
            voxel_resolution: 16,
            density_init: -2.0,
            field_features: 4,
            field_hidden: 16,
        }
    }
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub method: Method,
    pub particles: usize,
    pub iters: usize,
    pub particle_lr: f64,
    pub adapter_lr: f64,
    pub augmentation: Augmentation,
    pub adapter: AdapterKind,
    pub seed: u64,
    /// Checkpoint, metrics and render cadence in iterations.
    pub log_every: usize,
    pub eval_views: usize,
    pub extractor: Extractor,
    /// Views written per particle at each render snapshot.
    pub render_views: usize,
    pub scene: SceneConfig,
    pub render: RenderConfig,
    pub camera: CameraConfig,
    pub schedule: ScheduleConfig,
    pub residual_adapter: AdapterConfig,
    /// Number of shared tokens `L3`.
    pub shared_tokens: usize,
    pub shared_init_scale: f64,
    /// Rows and scale of random-token augmentation blocks.
    pub augment_tokens: usize,
    pub augment_scale: f64,
    /// Update the adapter on a fresh `(t, ε)` draw instead of the particle's.
    pub adapter_fresh_draw: bool,
    /// Perturb mixture means by this scale for stage 2 only.
    pub stage2_teacher_perturbation: Option<f64>,
    pub stratified_references: bool,
    pub inversion: InversionConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            method: Method::Sds,
            particles: 6,
            iters: 5000,
            particle_lr: 1e-2,
            adapter_lr: 1e-3,
            augmentation: Augmentation::None,
            adapter: AdapterKind::None,
            seed: 0,
            log_every: 500,
            eval_views: DEFAULT_VIEWS,
            extractor: Extractor::LogPosterior,
            render_views: 4,
            scene: SceneConfig::default(),
            render: RenderConfig::default(),
            camera: CameraConfig::default(),
            schedule: ScheduleConfig::default(),
            residual_adapter: AdapterConfig::default(),
            shared_tokens: 8,
            shared_init_scale: 0.02,
            augment_tokens: 5,
            augment_scale: 1.0,
            adapter_fresh_draw: false,
            stage2_teacher_perturbation: None,
            stratified_references: false,
            inversion: InversionConfig::default(),
        }
    }
}

impl DistillConfig {
    /// The canonical configuration of each method.
    pub fn for_method(method: Method) -> Self {
        let (augmentation, adapter) = match method {
            Method::Sds => (Augmentation::None, AdapterKind::None),
            Method::Vsd => (Augmentation::None, AdapterKind::Residual),
            Method::Tsd => (Augmentation::Hiper, AdapterKind::SharedTokens),
        };
        Self {
            method,
            augmentation,
            adapter,
            ..Self::default()
        }
    }

    /// Long-run preset: 50k iterations, 120 evaluation views.
    pub fn paper_preset(method: Method) -> Self {
        Self {
            iters: 50_000,
            log_every: 5_000,
            eval_views: crate::metrics::PAPER_VIEWS,
            inversion: InversionConfig::paper_preset(),
            ..Self::for_method(method)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Validation(m));
        if self.particles == 0 {
            return bad("particles must be >= 1".into());
        }
        match (self.method, self.augmentation, self.adapter) {
            (Method::Tsd, Augmentation::Hiper, AdapterKind::SharedTokens) => {}
            (Method::Tsd, ..) => return bad("tsd requires augmentation = hiper and adapter = shared_tokens".into()),
            (Method::Vsd, _, AdapterKind::Residual) => {}
            (Method::Vsd, ..) => return bad("vsd requires adapter = residual".into()),
            (Method::Sds, _, AdapterKind::None) => {}
            (Method::Sds, ..) => return bad("sds takes no adapter (adapter = none)".into()),
        }
        if !(self.particle_lr > 0.0 && self.adapter_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.log_every == 0 || self.eval_views == 0 {
            return bad("log_every and eval_views must be >= 1".into());
        }
        if self.adapter == AdapterKind::SharedTokens && self.shared_tokens == 0 {
            return bad("shared_tokens must be >= 1".into());
        }
        if self.augmentation == Augmentation::RandomTokens && self.augment_tokens == 0 {
            return bad("augment_tokens must be >= 1".into());
        }
        if !(self.scene.init_scale >= 0.0 && self.augment_scale >= 0.0 && self.shared_init_scale >= 0.0) {
            return bad("initialization scales must be non-negative".into());
        }
        if let Some(p) = self.stage2_teacher_perturbation {
            if !(p >= 0.0) {
                return bad("stage2_teacher_perturbation must be non-negative".into());
            }
        }
        let want_mode = match self.scene.kind {
            SceneKind::Image => CameraMode::Planar,
            SceneKind::Voxel | SceneKind::Field => CameraMode::Orbit,
        };
        if self.camera.mode != want_mode {
            return bad(format!("{:?} scenes need {:?} cameras", self.scene.kind, want_mode));
        }
        if self.scene.kind != SceneKind::Image
            && (self.scene.voxel_resolution == 0 || self.scene.field_features == 0 || self.scene.field_hidden == 0)
        {
            return bad("volume scene sizes must be positive".into());
        }
        self.render.validate()?;
        self.camera.validate()?;
        crate::numerics::NoiseSchedule::new(self.schedule.clone())?;
        Ok(())
    }
}
