use serde::{Deserialize, Serialize};

use crate::error::{check_len, LabError, Result};
use crate::scenes::{Camera, ImageShape};

/// Render settings shared by every scene kind.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub image: ImageShape,
    pub samples_per_ray: usize,
    /// The volume occupies `[-extent, extent]^3`; the orthographic image
    /// plane spans the same half-width.
    pub extent: f64,
    pub background: Vec<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self::for_image(ImageShape { height: 16, width: 16, channels: 3 })
    }
}

impl RenderConfig {
    pub fn for_image(image: ImageShape) -> Self {
        Self {
            image,
            samples_per_ray: 32,
            extent: 1.0,
            background: vec![1.0; image.channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.is_empty() {
            return Err(LabError::Validation("image dimensions must be positive".into()));
        }
        if self.samples_per_ray == 0 || !(self.extent > 0.0) {
            return Err(LabError::Validation("samples_per_ray and extent must be positive".into()));
        }
        if self.background.len() != self.image.channels
            || self.background.iter().any(|b| !(0.0..=1.0).contains(b))
        {
            return Err(LabError::Validation(
                "background must have one value in [0, 1] per channel".into(),
            ));
        }
        Ok(())
    }
}

/// A continuous field queried by the volume renderer.
pub trait RadianceField {
    fn channels(&self) -> usize;
    fn n_field_params(&self) -> usize;
    /// Density at `p`; writes the color into `color`.
    fn query(&self, p: [f64; 3], color: &mut [f64]) -> f64;
    /// Accumulate `dsigma·∂σ/∂θ + dcolor·∂c/∂θ` at `p` into `grad`.
    fn query_vjp(&self, p: [f64; 3], dsigma: f64, dcolor: &[f64], grad: &mut [f64]);
}

/// Per-sample compositing weights `T_i α_i` and the residual transmittance.
pub fn composite_weights(sigmas: &[f64], delta: f64) -> (Vec<f64>, f64) {
    let mut trans = 1.0;
    let weights = sigmas
        .iter()
        .map(|s| {
            let alpha = 1.0 - (-s * delta).exp();
            let w = trans * alpha;
            trans *= 1.0 - alpha;
            w
        })
        .collect();
    (weights, trans)
}

struct Ray {
    origin: [f64; 3],
    dir: [f64; 3],
}

impl Ray {
    fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }

    /// Entry and exit distances through the cube, if the ray hits it.
    fn slab(&self, extent: f64) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if self.dir[a].abs() < 1e-12 {
                if self.origin[a].abs() > extent {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / self.dir[a];
            let (mut lo, mut hi) = ((-extent - self.origin[a]) * inv, (extent - self.origin[a]) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t1 > t0.max(0.0)).then_some((t0.max(0.0), t1))
    }
}

fn camera_rays(camera: &Camera, cfg: &RenderConfig) -> Result<Vec<Ray>> {
    if camera.planar {
        return Err(LabError::Render("volume scenes need an orbit camera".into()));
    }
    if !(camera.radius > 3f64.sqrt() * cfg.extent) {
        return Err(LabError::Render(format!(
            "camera radius {} does not clear the volume bounds",
            camera.radius
        )));
    }
    if !camera.azimuth.is_finite() || !camera.elevation.is_finite() {
        return Err(LabError::Render("non-finite camera angles".into()));
    }
    let fwd = camera.position_dir();
    let (sa, ca) = camera.azimuth.sin_cos();
    let right = [ca, 0.0, -sa];
    let up = [
        fwd[1] * right[2] - fwd[2] * right[1],
        fwd[2] * right[0] - fwd[0] * right[2],
        fwd[0] * right[1] - fwd[1] * right[0],
    ];
    let (h, w) = (cfg.image.height, cfg.image.width);
    let e = cfg.extent;
    let mut rays = Vec::with_capacity(h * w);
    for i in 0..h {
        let v = e - (i as f64 + 0.5) * 2.0 * e / h as f64;
        for j in 0..w {
            let u = -e + (j as f64 + 0.5) * 2.0 * e / w as f64;
            let origin = std::array::from_fn(|a| camera.radius * fwd[a] + u * right[a] + v * up[a]);
            rays.push(Ray {
                origin,
                dir: [-fwd[0], -fwd[1], -fwd[2]],
            });
        }
    }
    Ok(rays)
}

fn check_field<F: RadianceField>(field: &F, cfg: &RenderConfig) -> Result<()> {
    cfg.validate()?;
    if field.channels() != cfg.image.channels {
        return Err(LabError::Shape(format!(
            "field has {} channels but the image has {}",
            field.channels(),
            cfg.image.channels
        )));
    }
    Ok(())
}

/// Midpoint quadrature positions and the step length for one ray.
fn samples(ray: &Ray, extent: f64, n: usize) -> Option<(Vec<[f64; 3]>, f64)> {
    let (t0, t1) = ray.slab(extent)?;
    let delta = (t1 - t0) / n as f64;
    Some(((0..n).map(|s| ray.at(t0 + (s as f64 + 0.5) * delta)).collect(), delta))
}

/// Every quadrature point the renderer would query for this view.
pub fn ray_sample_points(camera: &Camera, cfg: &RenderConfig) -> Result<Vec<[f64; 3]>> {
    cfg.validate()?;
    Ok(camera_rays(camera, cfg)?
        .iter()
        .filter_map(|ray| samples(ray, cfg.extent, cfg.samples_per_ray))
        .flat_map(|(pts, _)| pts)
        .collect())
}

pub(crate) fn render_field<F: RadianceField>(field: &F, camera: &Camera, cfg: &RenderConfig) -> Result<Vec<f64>> {
    check_field(field, cfg)?;
    let c = cfg.image.channels;
    let mut out = vec![0.0; cfg.image.len()];
    let mut color = vec![0.0; c];
    for (r, ray) in camera_rays(camera, cfg)?.iter().enumerate() {
        let px = &mut out[r * c..(r + 1) * c];
        let Some((points, delta)) = samples(ray, cfg.extent, cfg.samples_per_ray) else {
            px.copy_from_slice(&cfg.background);
            continue;
        };
        let mut trans = 1.0;
        for p in points {
            let sigma = field.query(p, &mut color);
            let alpha = 1.0 - (-sigma * delta).exp();
            for k in 0..c {
                px[k] += trans * alpha * color[k];
            }
            trans *= 1.0 - alpha;
        }
        for k in 0..c {
            px[k] += trans * cfg.background[k];
        }
    }
    Ok(out)
}

pub(crate) fn render_field_vjp<F: RadianceField>(
    field: &F,
    camera: &Camera,
    cfg: &RenderConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    check_field(field, cfg)?;
    check_len("upstream gradient", upstream.len(), cfg.image.len())?;
    let c = cfg.image.channels;
    let n = cfg.samples_per_ray;
    let mut grad = vec![0.0; field.n_field_params()];
    let mut sigmas = vec![0.0; n];
    let mut colors = vec![0.0; n * c];
    let mut dcolor = vec![0.0; c];
    for (r, ray) in camera_rays(camera, cfg)?.iter().enumerate() {
        let up = &upstream[r * c..(r + 1) * c];
        if up.iter().all(|u| *u == 0.0) {
            continue;
        }
        let Some((points, delta)) = samples(ray, cfg.extent, n) else {
            continue;
        };
        for (s, p) in points.iter().enumerate() {
            sigmas[s] = field.query(*p, &mut colors[s * c..(s + 1) * c]);
        }
        let (weights, t_final) = composite_weights(&sigmas, delta);
        // ⟨up, light arriving from behind sample s⟩, swept back to front
        let mut after: f64 = (0..c).map(|k| up[k] * t_final * cfg.background[k]).sum();
        let mut trans_next = t_final;
        for s in (0..n).rev() {
            let col = &colors[s * c..(s + 1) * c];
            let up_col: f64 = (0..c).map(|k| up[k] * col[k]).sum();
            let dsigma = delta * (trans_next * up_col - after);
            for k in 0..c {
                dcolor[k] = weights[s] * up[k];
            }
            field.query_vjp(points[s], dsigma, &dcolor, &mut grad);
            after += weights[s] * up_col;
            let alpha = 1.0 - (-sigmas[s] * delta).exp();
            // T_s = T_{s+1} / (1 - α_s) is unstable for opaque samples, so
            // recover it from the weight when possible.
            trans_next = if alpha > 0.0 { weights[s] / alpha } else { trans_next };
        }
    }
    Ok(grad)
}

/// Trilinear stencil for `p` on an `n³` grid of cell centers spanning
/// `[-extent, extent]^3`, clamped at the border.
pub(crate) fn trilinear(p: [f64; 3], n: usize, extent: f64) -> [(usize, f64); 8] {
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let g = ((p[a] + extent) / (2.0 * extent) * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (g.floor() as usize).min(n.saturating_sub(2));
        base[a] = i0;
        frac[a] = if n > 1 { g - i0 as f64 } else { 0.0 };
    }
    let mut out = [(0usize, 0.0); 8];
    for (corner, slot) in out.iter_mut().enumerate() {
        let mut idx = [0usize; 3];
        let mut w = 1.0;
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            idx[a] = (base[a] + bit).min(n - 1);
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        *slot = ((idx[0] * n + idx[1]) * n + idx[2], w);
    }
    out
}
