use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{sigmoid, softplus, softplus_grad, RngStream};
use crate::scenes::volume::{render_field, render_field_vjp, trilinear, RadianceField};
use crate::scenes::{Camera, RenderConfig, Renderable};

/// Explicit voxel radiance field: per-node density and color logits,
/// trilinearly interpolated, then softplus / sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelScene {
    pub resolution: usize,
    pub channels: usize,
    pub extent: f64,
    /// `N³` density logits followed by `N³·C` color logits.
    pub params: Vec<f64>,
}

impl VoxelScene {
    pub fn new(resolution: usize, channels: usize, density: f64, color: f64) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(LabError::Validation("voxel resolution and channels must be positive".into()));
        }
        let n3 = resolution.pow(3);
        let mut params = vec![density; n3];
        params.extend(std::iter::repeat_n(color, n3 * channels));
        Ok(Self {
            resolution,
            channels,
            extent: 1.0,
            params,
        })
    }

    pub fn random(resolution: usize, channels: usize, scale: f64, rng: &mut RngStream) -> Result<Self> {
        let mut s = Self::new(resolution, channels, 0.0, 0.0)?;
        for v in &mut s.params {
            *v = scale * rng.normal();
        }
        Ok(s)
    }

    pub fn n_voxels(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn density_logits(&self) -> &[f64] {
        &self.params[..self.n_voxels()]
    }

    pub fn density_logits_mut(&mut self) -> &mut [f64] {
        let n = self.n_voxels();
        &mut self.params[..n]
    }

    pub fn color_logits_mut(&mut self) -> &mut [f64] {
        let n = self.n_voxels();
        &mut self.params[n..]
    }

    fn check(&self, cfg: &RenderConfig) -> Result<()> {
        if (self.extent - cfg.extent).abs() > 0.0 {
            return Err(LabError::Shape(format!(
                "voxel extent {} differs from render extent {}",
                self.extent, cfg.extent
            )));
        }
        Ok(())
    }
}

impl RadianceField for VoxelScene {
    fn channels(&self) -> usize {
        self.channels
    }

    fn n_field_params(&self) -> usize {
        self.params.len()
    }

    fn query(&self, p: [f64; 3], color: &mut [f64]) -> f64 {
        let n3 = self.n_voxels();
        let st = trilinear(p, self.resolution, self.extent);
        let mut d = 0.0;
        color.iter_mut().for_each(|c| *c = 0.0);
        for &(idx, w) in &st {
            d += w * self.params[idx];
            for (k, c) in color.iter_mut().enumerate() {
                *c += w * self.params[n3 + idx * self.channels + k];
            }
        }
        color.iter_mut().for_each(|c| *c = sigmoid(*c));
        softplus(d)
    }

    fn query_vjp(&self, p: [f64; 3], dsigma: f64, dcolor: &[f64], grad: &mut [f64]) {
        let n3 = self.n_voxels();
        let c = self.channels;
        let st = trilinear(p, self.resolution, self.extent);
        let mut d = 0.0;
        let mut logit = vec![0.0; c];
        for &(idx, w) in &st {
            d += w * self.params[idx];
            for k in 0..c {
                logit[k] += w * self.params[n3 + idx * c + k];
            }
        }
        let dd = dsigma * softplus_grad(d);
        for k in 0..c {
            let s = sigmoid(logit[k]);
            logit[k] = dcolor[k] * s * (1.0 - s);
        }
        for &(idx, w) in &st {
            grad[idx] += w * dd;
            for k in 0..c {
                grad[n3 + idx * c + k] += w * logit[k];
            }
        }
    }
}

impl Renderable for VoxelScene {
    fn kind(&self) -> &'static str {
        "voxel"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn shape_info(&self) -> serde_json::Value {
        serde_json::json!({ "resolution": self.resolution, "channels": self.channels, "extent": self.extent })
    }

    fn render(&self, camera: &Camera, cfg: &RenderConfig) -> Result<Vec<f64>> {
        self.check(cfg)?;
        render_field(self, camera, cfg)
    }

    fn render_vjp(&self, camera: &Camera, cfg: &RenderConfig, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check(cfg)?;
        render_field_vjp(self, camera, cfg, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::ImageShape;

    fn cfg() -> RenderConfig {
        RenderConfig::for_image(ImageShape { height: 8, width: 8, channels: 3 })
    }

    #[test]
    fn empty_volume_renders_background() {
        let scene = VoxelScene::new(4, 3, -60.0, 0.3).unwrap();
        let img = scene.render(&Camera::orbit(0.4, 0.2, 3.0), &cfg()).unwrap();
        assert!(img.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn opaque_voxel_shows_its_color() {
        let n = 8;
        let mut scene = VoxelScene::new(n, 3, -60.0, 0.0).unwrap();
        let target = [2.0, -1.0, 0.5];
        // pixel (4, 4) of the front view passes through x = 0.125, y = -0.125,
        // which are exactly grid nodes 4 and 3
        let center = (4, 3, 4);
        for di in 0..3 {
            for dj in 0..3 {
                for dk in 0..3 {
                    let idx = scene.voxel_index(center.0 + di - 1, center.1 + dj - 1, center.2 + dk - 1);
                    for k in 0..3 {
                        scene.color_logits_mut()[idx * 3 + k] = target[k];
                    }
                }
            }
        }
        let idx = scene.voxel_index(center.0, center.1, center.2);
        scene.density_logits_mut()[idx] = 400.0;
        let mut c = cfg();
        c.samples_per_ray = 64;
        let img = scene.render(&Camera::orbit(0.0, 0.0, 3.0), &c).unwrap();
        let px = &img[(4 * 8 + 4) * 3..(4 * 8 + 4) * 3 + 3];
        for k in 0..3 {
            assert!((px[k] - sigmoid(target[k])).abs() < 1e-3, "{px:?}");
        }
    }
}
