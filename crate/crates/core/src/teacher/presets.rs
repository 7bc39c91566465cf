use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::RngStream;
use crate::scenes::ImageShape;
use crate::teacher::{Component, GmTeacher};

/// Parameters for a synthetic image-space mixture: each mode is a colored
/// shape on a white canvas with a white border.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherGeometry {
    pub modes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Per-component standard deviation `s`.
    pub spread: f64,
    pub embed_dim: usize,
    pub anchor_scale: f64,
    pub temperature: f64,
    /// Border width in pixels.
    pub border: usize,
}

impl Default for TeacherGeometry {
    fn default() -> Self {
        Self {
            modes: 4,
            height: 16,
            width: 16,
            channels: 3,
            spread: 0.05,
            embed_dim: 8,
            anchor_scale: 6.0,
            temperature: 1.0,
            border: 2,
        }
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.5, 0.5, 0.5],
    [0.9, 0.15, 0.1],
    [0.1, 0.7, 0.2],
    [0.15, 0.25, 0.9],
    [0.95, 0.8, 0.1],
    [0.8, 0.2, 0.8],
    [0.1, 0.75, 0.8],
    [0.3, 0.2, 0.1],
];

fn inside(shape: usize, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    match shape % 6 {
        0 => r < 0.7,
        1 => u.abs().max(v.abs()) < 0.6,
        2 => (0.4..0.8).contains(&r),
        3 => (u.abs() < 0.25 || v.abs() < 0.25) && u.abs().max(v.abs()) < 0.8,
        4 => u.abs() + v.abs() < 0.8,
        _ => ((v + 1.0) * 2.5).floor() as i64 % 2 == 0 && u.abs() < 0.8,
    }
}

fn mode_image(k: usize, g: &TeacherGeometry) -> Vec<f64> {
    let color = PALETTE[k % PALETTE.len()];
    let mut img = vec![1.0; g.height * g.width * g.channels];
    let inner_h = g.height.saturating_sub(2 * g.border).max(1) as f64;
    let inner_w = g.width.saturating_sub(2 * g.border).max(1) as f64;
    for i in g.border..g.height.saturating_sub(g.border) {
        for j in g.border..g.width.saturating_sub(g.border) {
            let v = 2.0 * ((i - g.border) as f64 + 0.5) / inner_h - 1.0;
            let u = 2.0 * ((j - g.border) as f64 + 0.5) / inner_w - 1.0;
            // shapes cycle every 6 modes; offset the pattern so repeats differ
            if inside(k + k / 6, u, v) {
                for c in 0..g.channels {
                    img[(i * g.width + j) * g.channels + c] = color[c % 3];
                }
            }
        }
    }
    img
}

impl TeacherGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(LabError::Validation("need at least one mode".into()));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.embed_dim == 0 {
            return Err(LabError::Validation("image and embedding sizes must be positive".into()));
        }
        if 2 * self.border >= self.height.min(self.width) {
            return Err(LabError::Validation(format!(
                "border {} leaves no interior in a {}x{} image",
                self.border, self.height, self.width
            )));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(LabError::Validation(format!("spread must be >= 0, got {}", self.spread)));
        }
        if !(self.temperature > 0.0) || !self.anchor_scale.is_finite() {
            return Err(LabError::Validation("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<GmTeacher> {
        self.validate()?;
        let shape = ImageShape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        };
        // one-hot anchors while they fit, deterministic random directions after
        let mut extra = RngStream::new(0x616e_6368, self.embed_dim as u64);
        let components = (0..self.modes)
            .map(|k| {
                let anchor = if k < self.embed_dim {
                    let mut a = vec![0.0; self.embed_dim];
                    a[k] = self.anchor_scale;
                    a
                } else {
                    let mut a = extra.normal_vec(self.embed_dim);
                    let n = crate::numerics::norm(&a);
                    a.iter_mut().for_each(|v| *v *= self.anchor_scale / n);
                    a
                };
                Component {
                    mean: mode_image(k, self),
                    s: self.spread,
                    anchor,
                }
            })
            .collect();
        let t = GmTeacher {
            dim: shape.len(),
            embed_dim: self.embed_dim,
            cond_temperature: self.temperature,
            components,
            image: Some(shape),
        };
        t.validate()?;
        Ok(t)
    }
}

/// The standard 4-mode, 16x16x3 teacher used by the benchmark preset.
pub fn bench_teacher() -> GmTeacher {
    TeacherGeometry::default().build().expect("default geometry is valid")
}

/// One isotropic Gaussian with a fixed smooth mean; `s = 0` gives a point mass.
pub fn single_mode_teacher(dim: usize, s: f64, embed_dim: usize) -> GmTeacher {
    GmTeacher {
        dim,
        embed_dim,
        cond_temperature: 1.0,
        components: vec![Component {
            mean: (0..dim).map(|j| 0.5 + 0.3 * (j as f64 * 0.7).sin()).collect(),
            s,
            anchor: vec![0.0; embed_dim],
        }],
        image: None,
    }
}
