//! Differentiable particle parameterizations and the rendering function
//! `x = g(θ, c)`.

mod camera;
mod field;
mod image;
mod volume;
mod voxel;

pub use camera::{sample_camera, Camera, CameraConfig, CameraMode};
pub use field::{FieldBlock, GridMlpField};
pub use image::ImageScene;
pub use volume::{composite_weights, ray_sample_points, RadianceField, RenderConfig};
pub use voxel::VoxelScene;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Height, width and channel count of a rendered image (row-major HWC).
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A particle: any differentiable scene with a flat parameter vector.
pub trait Renderable {
    fn kind(&self) -> &'static str;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Shape metadata stored in checkpoint sidecars.
    fn shape_info(&self) -> serde_json::Value;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    fn render(&self, camera: &Camera, cfg: &RenderConfig) -> Result<Vec<f64>>;

    /// Reverse-mode pullback: `dL/dθ` given `upstream = dL/dimage`.
    fn render_vjp(&self, camera: &Camera, cfg: &RenderConfig, upstream: &[f64]) -> Result<Vec<f64>>;
}

/// Closed set of scene kinds available to distillation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scene {
    Image(ImageScene),
    Voxel(VoxelScene),
    Field(GridMlpField),
}

macro_rules! dispatch {
    ($self:ident, $s:ident => $e:expr) => {
        match $self {
            Scene::Image($s) => $e,
            Scene::Voxel($s) => $e,
            Scene::Field($s) => $e,
        }
    };
}

impl Renderable for Scene {
    fn kind(&self) -> &'static str {
        dispatch!(self, s => s.kind())
    }

    fn params(&self) -> &[f64] {
        dispatch!(self, s => s.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        dispatch!(self, s => s.params_mut())
    }

    fn shape_info(&self) -> serde_json::Value {
        dispatch!(self, s => s.shape_info())
    }

    fn render(&self, camera: &Camera, cfg: &RenderConfig) -> Result<Vec<f64>> {
        dispatch!(self, s => s.render(camera, cfg))
    }

    fn render_vjp(&self, camera: &Camera, cfg: &RenderConfig, upstream: &[f64]) -> Result<Vec<f64>> {
        dispatch!(self, s => s.render_vjp(camera, cfg, upstream))
    }
}
