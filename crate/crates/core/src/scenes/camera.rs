use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::RngStream;
use crate::teacher::CAMERA_EMBED_DIM;

/// Camera pose. Orbit cameras look at the origin from `radius`; planar
/// cameras (2-D scenes) only carry an integer pixel translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub jitter: (i32, i32),
    pub planar: bool,
}

impl Camera {
    pub fn planar(dx: i32, dy: i32) -> Self {
        Self {
            azimuth: 0.0,
            elevation: 0.0,
            radius: 1.0,
            jitter: (dx, dy),
            planar: true,
        }
    }

    pub fn orbit(azimuth: f64, elevation: f64, radius: f64) -> Self {
        Self {
            azimuth,
            elevation,
            radius,
            jitter: (0, 0),
            planar: false,
        }
    }

    /// `(cos az, sin az, cos el, sin el)`, or zeros for planar cameras.
    pub fn embedding(&self) -> [f64; CAMERA_EMBED_DIM] {
        if self.planar {
            [0.0; CAMERA_EMBED_DIM]
        } else {
            [
                self.azimuth.cos(),
                self.azimuth.sin(),
                self.elevation.cos(),
                self.elevation.sin(),
            ]
        }
    }

    /// Unit vector from the origin toward the camera (y is up).
    pub fn position_dir(&self) -> [f64; 3] {
        let (ce, se) = (self.elevation.cos(), self.elevation.sin());
        [ce * self.azimuth.sin(), se, ce * self.azimuth.cos()]
    }
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMode {
    Planar,
    Orbit,
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub mode: CameraMode,
    /// Elevation bounds in degrees.
    pub elevation_deg: (f64, f64),
    pub radius: f64,
    /// Planar translation is drawn from `-jitter..=jitter` pixels per axis.
    pub jitter: i32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            mode: CameraMode::Planar,
            elevation_deg: (-30.0, 45.0),
            radius: 3.0,
            jitter: 2,
        }
    }
}

impl CameraConfig {
    pub fn orbit() -> Self {
        Self {
            mode: CameraMode::Orbit,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.elevation_deg;
        if !(lo <= hi && lo > -90.0 && hi < 90.0) {
            return Err(LabError::Validation(format!("invalid elevation range [{lo}, {hi}]")));
        }
        if !(self.radius > 0.0) || self.jitter < 0 {
            return Err(LabError::Validation("camera radius must be positive and jitter >= 0".into()));
        }
        Ok(())
    }

    /// `V` evenly spaced azimuths at zero elevation (zero jitter for planar).
    pub fn eval_views(&self, views: usize) -> Vec<Camera> {
        (0..views)
            .map(|v| match self.mode {
                CameraMode::Planar => Camera::planar(0, 0),
                CameraMode::Orbit => Camera::orbit(
                    2.0 * std::f64::consts::PI * v as f64 / views as f64,
                    0.0,
                    self.radius,
                ),
            })
            .collect()
    }
}

/// Draw a training camera: azimuth `U[0, 2π)`, elevation uniform in the
/// configured band, fixed radius; planar cameras draw a pixel jitter instead.
pub fn sample_camera(rng: &mut RngStream, cfg: &CameraConfig) -> Camera {
    match cfg.mode {
        CameraMode::Planar => {
            let dx = rng.uniform_int(-cfg.jitter as i64, cfg.jitter as i64) as i32;
            let dy = rng.uniform_int(-cfg.jitter as i64, cfg.jitter as i64) as i32;
            Camera::planar(dx, dy)
        }
        CameraMode::Orbit => {
            let az = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
            let (lo, hi) = cfg.elevation_deg;
            let el = rng.uniform_range(lo, hi).to_radians();
            Camera::orbit(az, el, cfg.radius)
        }
    }
}
