use serde::{Deserialize, Serialize};

use crate::error::{check_len, LabError, Result};
use crate::numerics::{sigmoid, RngStream};
use crate::scenes::{Camera, ImageShape, RenderConfig, Renderable};

/// A 2-D particle: one logit per pixel channel, rendered through a sigmoid.
///
/// Planar camera jitter translates the image; pixels shifted in from outside
/// take the background color.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScene {
    pub shape: ImageShape,
    pub logits: Vec<f64>,
}

impl ImageScene {
    pub fn zeros(shape: ImageShape) -> Self {
        Self {
            shape,
            logits: vec![0.0; shape.len()],
        }
    }

    pub fn random(shape: ImageShape, scale: f64, rng: &mut RngStream) -> Self {
        Self {
            shape,
            logits: (0..shape.len()).map(|_| scale * rng.normal()).collect(),
        }
    }

    fn check(&self, cfg: &RenderConfig) -> Result<()> {
        if cfg.image != self.shape {
            return Err(LabError::Shape(format!(
                "image scene is {:?} but render config asks for {:?}",
                self.shape, cfg.image
            )));
        }
        check_len("background", cfg.background.len(), self.shape.channels)
    }

    /// Source pixel for output `(i, j)` under jitter, if inside the grid.
    fn source(&self, i: usize, j: usize, camera: &Camera) -> Option<usize> {
        let (dx, dy) = camera.jitter;
        let si = i as i64 + dy as i64;
        let sj = j as i64 + dx as i64;
        if si < 0 || sj < 0 || si >= self.shape.height as i64 || sj >= self.shape.width as i64 {
            None
        } else {
            Some((si as usize * self.shape.width + sj as usize) * self.shape.channels)
        }
    }
}

impl Renderable for ImageScene {
    fn kind(&self) -> &'static str {
        "image"
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn shape_info(&self) -> serde_json::Value {
        serde_json::json!({ "height": self.shape.height, "width": self.shape.width, "channels": self.shape.channels })
    }

    fn render(&self, camera: &Camera, cfg: &RenderConfig) -> Result<Vec<f64>> {
        self.check(cfg)?;
        let c = self.shape.channels;
        let mut out = vec![0.0; self.shape.len()];
        for i in 0..self.shape.height {
            for j in 0..self.shape.width {
                let dst = (i * self.shape.width + j) * c;
                match self.source(i, j, camera) {
                    Some(src) => {
                        for k in 0..c {
                            out[dst + k] = sigmoid(self.logits[src + k]);
                        }
                    }
                    None => out[dst..dst + c].copy_from_slice(&cfg.background),
                }
            }
        }
        Ok(out)
    }

    fn render_vjp(&self, camera: &Camera, cfg: &RenderConfig, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check(cfg)?;
        check_len("upstream gradient", upstream.len(), self.shape.len())?;
        let c = self.shape.channels;
        let mut grad = vec![0.0; self.logits.len()];
        for i in 0..self.shape.height {
            for j in 0..self.shape.width {
                if let Some(src) = self.source(i, j, camera) {
                    let dst = (i * self.shape.width + j) * c;
                    for k in 0..c {
                        let p = sigmoid(self.logits[src + k]);
                        grad[src + k] += upstream[dst + k] * p * (1.0 - p);
                    }
                }
            }
        }
        Ok(grad)
    }
}
