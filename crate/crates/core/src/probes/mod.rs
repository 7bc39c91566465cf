//! Midpoint-convexity probes for the SDS objective and for radiance-field
//! outputs as functions of their parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, LabError, Result};
use crate::numerics::{NoiseSchedule, RngStream};
use crate::par;
use crate::persist::{write_atomic, write_json};
use crate::prompts::TokenMatrix;
use crate::scenes::{FieldBlock, GridMlpField};
use crate::teacher::{Denoiser, GmTeacher};

/// Violation threshold `absolute + relative * max(|f(a)|, |f(m)|, |f(b)|)`.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    pub absolute: f64,
    pub relative: f64,
}

impl Tolerance {
    pub const fn relative(relative: f64) -> Self {
        Self { absolute: 0.0, relative }
    }

    fn validate(&self) -> Result<()> {
        if !(self.absolute >= 0.0 && self.relative >= 0.0) || !self.absolute.is_finite() || !self.relative.is_finite() {
            return Err(LabError::Validation(format!(
                "tolerance must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }

    fn bound(&self, scale: f64) -> f64 {
        self.absolute + self.relative * scale
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::relative(1e-9)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    pub n_segments: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Largest `f(m) - (f(a) + f(b)) / 2` seen, clamped at zero.
    pub max_violation: f64,
    /// Number of `(t, ε)` pairs held fixed across evaluations; 0 when the
    /// probed function is deterministic.
    pub crn_batch: usize,
    pub tol: Tolerance,
}

pub const PROBE_CSV_HEADER: &str = "name,n_segments,violations,violation_fraction,max_violation,crn_batch,tol_absolute,tol_relative";

impl ProbeReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.name,
            self.n_segments,
            self.violations,
            self.violation_fraction,
            self.max_violation,
            self.crn_batch,
            self.tol.absolute,
            self.tol.relative
        )
    }
}

/// Writes `<stem>.json` holding all reports and `<stem>.csv` with one row per report.
pub fn write_reports(dir: &Path, stem: &str, reports: &[ProbeReport]) -> Result<()> {
    write_json(&dir.join(format!("{stem}.json")), &reports)?;
    let mut csv = String::from(PROBE_CSV_HEADER);
    csv.push('\n');
    for r in reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_atomic(&dir.join(format!("{stem}.csv")), csv.as_bytes())
}

/// Fixed `(t, ε)` draws shared by every potential evaluation of one probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrnBatch {
    pub samples: Vec<(usize, Vec<f64>)>,
}

impl CrnBatch {
    /// `pairs` antithetic pairs `(t, ε)`, `(t, -ε)`. The pairing makes the
    /// Monte-Carlo residual at a single-Gaussian mode cancel exactly in the gradient.
    pub fn antithetic(schedule: &NoiseSchedule, dim: usize, pairs: usize, rng: &mut RngStream) -> Self {
        let mut samples = Vec::with_capacity(2 * pairs);
        for _ in 0..pairs {
            let t = schedule.sample_t(rng);
            let eps = rng.normal_vec(dim);
            let neg = eps.iter().map(|v| -v).collect();
            samples.push((t, eps));
            samples.push((t, neg));
        }
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `mean_j ω(t_j) ‖ε̂(α x + σ ε_j, t_j, prompt) - ε_j‖²` over the fixed batch.
pub fn sds_potential_eval<D: Denoiser + ?Sized>(
    teacher: &D,
    x: &[f64],
    prompt: &TokenMatrix,
    crn: &CrnBatch,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if crn.is_empty() {
        return Err(LabError::Validation("crn batch is empty".into()));
    }
    check_len("potential input", x.len(), teacher.dim())?;
    let pooled = prompt.pool();
    let mut total = 0.0;
    for (t, eps) in &crn.samples {
        check_len("crn noise", eps.len(), x.len())?;
        let tp = schedule.eval(*t)?;
        let x_t: Vec<f64> = x.iter().zip(eps).map(|(xi, e)| tp.alpha * xi + tp.sigma * e).collect();
        let eps_hat = teacher.predict_pooled(&x_t, tp, &pooled)?;
        let sq: f64 = eps_hat.iter().zip(eps).map(|(a, b)| (a - b) * (a - b)).sum();
        total += tp.omega * sq;
    }
    Ok(total / crn.len() as f64)
}

/// Draws `n_segments` endpoint pairs with `sample` (sequentially, so the rng
/// sequence is fixed) and counts midpoint-convexity violations of `f`.
pub fn midpoint_convexity_probe<F, S>(
    name: &str,
    f: F,
    mut sample: S,
    n_segments: usize,
    tol: Tolerance,
    rng: &mut RngStream,
) -> Result<ProbeReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
    S: FnMut(&mut RngStream) -> (Vec<f64>, Vec<f64>),
{
    if n_segments == 0 {
        return Err(LabError::Validation("probe needs at least one segment".into()));
    }
    tol.validate()?;
    let segments: Vec<(Vec<f64>, Vec<f64>)> = (0..n_segments).map(|_| sample(rng)).collect();
    let gaps = par::map(n_segments, |i| -> Result<(f64, f64)> {
        let (a, b) = &segments[i];
        check_len("segment endpoint", b.len(), a.len())?;
        let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (fa, fb, fm) = (f(a)?, f(b)?, f(&m)?);
        if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
            return Err(LabError::Numeric(format!(
                "probe '{name}' segment {i}: non-finite value (f(a)={fa}, f(m)={fm}, f(b)={fb})"
            )));
        }
        let scale = fa.abs().max(fb.abs()).max(fm.abs());
        Ok((fm - 0.5 * (fa + fb), tol.bound(scale)))
    });
    let mut violations = 0;
    let mut max_violation = 0.0f64;
    for g in gaps {
        let (gap, bound) = g?;
        if gap > bound {
            violations += 1;
        }
        max_violation = max_violation.max(gap);
    }
    Ok(ProbeReport {
        name: name.to_string(),
        n_segments,
        violations,
        violation_fraction: violations as f64 / n_segments as f64,
        max_violation,
        crn_batch: 0,
        tol,
    })
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialProbeConfig {
    pub n_segments: usize,
    pub crn_pairs: usize,
    /// Endpoints are a random component mean plus `radius * N(0, I)`.
    pub radius: f64,
    pub tol: Tolerance,
}

impl Default for PotentialProbeConfig {
    fn default() -> Self {
        Self {
            n_segments: 1000,
            crn_pairs: 16,
            radius: 0.1,
            tol: Tolerance::default(),
        }
    }
}

/// Midpoint convexity of the SDS potential in image space. Segment endpoints
/// sit near independently chosen components, so a multi-mode teacher gets
/// segments that cross between modes.
pub fn potential_convexity_probe(
    name: &str,
    teacher: &GmTeacher,
    prompt: &TokenMatrix,
    schedule: &NoiseSchedule,
    cfg: &PotentialProbeConfig,
    rng: &mut RngStream,
) -> Result<ProbeReport> {
    teacher.validate()?;
    if cfg.crn_pairs == 0 {
        return Err(LabError::Validation("crn batch is empty".into()));
    }
    let crn = CrnBatch::antithetic(schedule, teacher.dim, cfg.crn_pairs, &mut rng.substream(0));
    let mut seg_rng = rng.substream(1);
    let k = teacher.n_components();
    let radius = cfg.radius;
    let near_mode = move |r: &mut RngStream| -> Vec<f64> {
        let c = &teacher.components[r.index(k)];
        c.mean.iter().map(|m| m + radius * r.normal()).collect()
    };
    let f = |x: &[f64]| sds_potential_eval(teacher, x, prompt, &crn, schedule);
    let mut report = midpoint_convexity_probe(
        name,
        f,
        |r| (near_mode(r), near_mode(r)),
        cfg.n_segments,
        cfg.tol,
        &mut seg_rng,
    )?;
    report.crn_batch = crn.len();
    Ok(report)
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldProbeConfig {
    pub n_segments: usize,
    pub n_points: usize,
    /// Endpoints are the field's parameters plus `perturbation * N(0, I)` on the varied block(s).
    pub perturbation: f64,
    pub tol: Tolerance,
}

impl Default for FieldProbeConfig {
    fn default() -> Self {
        Self {
            n_segments: 1000,
            n_points: 8,
            perturbation: 1.0,
            tol: Tolerance::default(),
        }
    }
}

/// Reports from [`field_convexity_probe`]. The head-restricted pair is what
/// gets asserted; the general pair is descriptive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldProbeReport {
    pub density: ProbeReport,
    pub color: ProbeReport,
    pub general_density: ProbeReport,
    pub general_color: ProbeReport,
}

impl FieldProbeReport {
    pub fn all(&self) -> Vec<ProbeReport> {
        vec![
            self.density.clone(),
            self.color.clone(),
            self.general_density.clone(),
            self.general_color.clone(),
        ]
    }
}

#[derive(Clone, Copy)]
enum Output {
    Density,
    Color,
}

/// Midpoint convexity of σ(p) and c(p) as functions of the field parameters.
/// A segment counts as one violation if any probe point (any channel for
/// color) violates. Probe points are drawn once inside the grid.
pub fn field_convexity_probe(field: &GridMlpField, cfg: &FieldProbeConfig, rng: &mut RngStream) -> Result<FieldProbeReport> {
    if cfg.n_points == 0 {
        return Err(LabError::Validation("field probe needs at least one point".into()));
    }
    if !(cfg.perturbation >= 0.0 && cfg.perturbation.is_finite()) {
        return Err(LabError::Validation(format!(
            "perturbation must be finite and non-negative, got {}",
            cfg.perturbation
        )));
    }
    let mut point_rng = rng.substream(0);
    let e = field.extent;
    let points: Vec<[f64; 3]> = (0..cfg.n_points)
        .map(|_| {
            [
                point_rng.uniform_range(-e, e),
                point_rng.uniform_range(-e, e),
                point_rng.uniform_range(-e, e),
            ]
        })
        .collect();
    let all = 0..field.params.len();
    let cases = [
        ("lemma2_density_head", Output::Density, field.block_range(FieldBlock::DensityOut)),
        ("lemma2_color_head", Output::Color, field.block_range(FieldBlock::ColorOut)),
        ("lemma2_general_density", Output::Density, all.clone()),
        ("lemma2_general_color", Output::Color, all),
    ];
    let mut reports = Vec::with_capacity(cases.len());
    for (i, (name, output, range)) in cases.into_iter().enumerate() {
        let endpoint = |r: &mut RngStream| -> Vec<f64> {
            let mut p = field.params.clone();
            for v in &mut p[range.clone()] {
                *v += cfg.perturbation * r.normal();
            }
            p
        };
        let worst_gap = |a: &[f64], b: &[f64]| -> Result<(f64, f64)> {
            let mut fa = field.clone();
            fa.params.copy_from_slice(a);
            let mut fb = field.clone();
            fb.params.copy_from_slice(b);
            let mut fm = field.clone();
            for ((m, x), y) in fm.params.iter_mut().zip(a).zip(b) {
                *m = 0.5 * (x + y);
            }
            let eval = |f: &GridMlpField, p: [f64; 3]| match output {
                Output::Density => vec![f.density_at(p)],
                Output::Color => f.color_at(p),
            };
            // (gap - bound, gap) of the worst point/channel
            let mut worst = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in &points {
                let (va, vb, vm) = (eval(&fa, p), eval(&fb, p), eval(&fm, p));
                for ((ya, yb), ym) in va.iter().zip(&vb).zip(&vm) {
                    if !(ya.is_finite() && yb.is_finite() && ym.is_finite()) {
                        return Err(LabError::Numeric(format!("field probe '{name}': non-finite output at {p:?}")));
                    }
                    let gap = ym - 0.5 * (ya + yb);
                    let excess = gap - cfg.tol.bound(ya.abs().max(yb.abs()).max(ym.abs()));
                    if excess > worst.0 {
                        worst = (excess, gap);
                    }
                }
            }
            Ok(worst)
        };
        let report = segment_probe(name, cfg.n_segments, cfg.tol, &mut rng.substream(1 + i as u64), endpoint, worst_gap)?;
        reports.push(report);
    }
    let mut it = reports.into_iter();
    Ok(FieldProbeReport {
        density: it.next().expect("four cases"),
        color: it.next().expect("four cases"),
        general_density: it.next().expect("four cases"),
        general_color: it.next().expect("four cases"),
    })
}

/// Like [`midpoint_convexity_probe`] but for vector-valued outputs: `judge`
/// returns `(worst excess over tolerance, its raw gap)` for a segment.
fn segment_probe<E, J>(
    name: &str,
    n_segments: usize,
    tol: Tolerance,
    rng: &mut RngStream,
    mut endpoint: E,
    judge: J,
) -> Result<ProbeReport>
where
    E: FnMut(&mut RngStream) -> Vec<f64>,
    J: Fn(&[f64], &[f64]) -> Result<(f64, f64)> + Sync + Send,
{
    if n_segments == 0 {
        return Err(LabError::Validation("probe needs at least one segment".into()));
    }
    tol.validate()?;
    let segments: Vec<(Vec<f64>, Vec<f64>)> = (0..n_segments).map(|_| (endpoint(rng), endpoint(rng))).collect();
    let results = par::map(n_segments, |i| judge(&segments[i].0, &segments[i].1));
    let mut violations = 0;
    let mut max_violation = 0.0f64;
    for r in results {
        let (excess, gap) = r?;
        if excess > 0.0 {
            violations += 1;
        }
        max_violation = max_violation.max(gap);
    }
    Ok(ProbeReport {
        name: name.to_string(),
        n_segments,
        violations,
        violation_fraction: violations as f64 / n_segments as f64,
        max_violation,
        crn_batch: 0,
        tol,
    })
}
