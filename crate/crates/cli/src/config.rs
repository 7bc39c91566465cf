use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sdl_lab::distill::DistillConfig;
use sdl_lab::probes::{FieldProbeConfig, PotentialProbeConfig};
use sdl_lab::prompts::InversionConfig;

use crate::CliError;

/// Config for `distill`. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Teacher spec written by `make-teacher`.
    pub teacher: PathBuf,
    /// Base prompt written by `make-teacher`.
    pub prompt: PathBuf,
    /// Directory holding `tokens_particle_<i>.json`; defaults to `<out>/tokens`.
    #[serde(default)]
    pub tokens: Option<PathBuf>,
    #[serde(default)]
    pub distill: DistillConfig,
}

impl RunConfig {
    pub fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.teacher);
        fix(&mut self.prompt);
        if let Some(t) = self.tokens.as_mut() {
            fix(t);
        }
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct InvertConfig {
    pub particles: usize,
    pub stratified_references: bool,
    pub inversion: InversionConfig,
}

impl Default for InvertConfig {
    fn default() -> Self {
        Self {
            particles: 6,
            stratified_references: false,
            inversion: InversionConfig::default(),
        }
    }
}

/// Sizes of the random radiance field probed for `lemma2`.
#[derive(Clone, Debug, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FieldShape {
    pub resolution: usize,
    pub features: usize,
    pub hidden: usize,
    pub channels: usize,
}

impl Default for FieldShape {
    fn default() -> Self {
        Self {
            resolution: 4,
            features: 4,
            hidden: 16,
            channels: 3,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub potential: PotentialProbeConfig,
    pub field: FieldProbeConfig,
    pub field_shape: FieldShape,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Every published schema, keyed by the file name under `docs/`.
#[cfg(test)]
pub fn schemas() -> Vec<(&'static str, schemars::Schema)> {
    use sdl_lab::distill::BenchConfig;
    use sdl_lab::teacher::TeacherGeometry;
    vec![
        ("config-schema.json", schemars::schema_for!(RunConfig)),
        ("schemas/make-teacher.json", schemars::schema_for!(TeacherGeometry)),
        ("schemas/invert.json", schemars::schema_for!(InvertConfig)),
        ("schemas/probe.json", schemars::schema_for!(ProbeConfig)),
        ("schemas/bench.json", schemars::schema_for!(BenchConfig)),
    ]
}
