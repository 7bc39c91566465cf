//! Quality and diversity metrics over a particle set: Inception-Quality
//! analog (mean posterior entropy), Inception-Variance analog (entropy of the
//! mean posterior) and mean pairwise feature cosine similarity. The exact
//! mixture posterior stands in for a pretrained classifier.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{cosine_similarity, entropy};
use crate::prompts::TokenMatrix;
use crate::scenes::{Camera, RenderConfig, Renderable};
use crate::teacher::GmTeacher;

/// Per-view feature used by the cosine-similarity metric.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    /// Log of the classifier posterior.
    #[default]
    LogPosterior,
    /// Rendered pixels minus their mean.
    CenteredPixels,
}

impl Extractor {
    pub fn id(&self) -> &'static str {
        match self {
            Extractor::LogPosterior => "log_posterior",
            Extractor::CenteredPixels => "centered_pixels",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log_posterior" => Ok(Extractor::LogPosterior),
            "centered_pixels" => Ok(Extractor::CenteredPixels),
            other => Err(LabError::Validation(format!("unknown feature extractor {other:?}"))),
        }
    }
}

/// Evaluation protocol defaults: 24 views, with 120 available as a preset.
pub const DEFAULT_VIEWS: usize = 24;
pub const PAPER_VIEWS: usize = 120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iq: f64,
    pub iv: f64,
    /// Absent when fewer than two particles were evaluated.
    pub cosine_sim: Option<f64>,
    pub views: usize,
    pub extractor_id: String,
    /// `posteriors[particle][view][class]`.
    pub posteriors: Vec<Vec<Vec<f64>>>,
}

fn check_table(posteriors: &[Vec<f64>]) -> Result<usize> {
    let c = posteriors
        .first()
        .ok_or_else(|| LabError::Validation("empty posterior table".into()))?
        .len();
    if posteriors.iter().any(|p| p.len() != c) {
        return Err(LabError::Shape("posterior rows have different class counts".into()));
    }
    Ok(c)
}

/// Mean entropy over all rows (one row per rendered view of a particle).
pub fn iq_from_table(posteriors: &[Vec<f64>]) -> Result<f64> {
    check_table(posteriors)?;
    let mut total = 0.0;
    for p in posteriors {
        total += entropy(p)?;
    }
    Ok(total / posteriors.len() as f64)
}

/// Entropy of the row-averaged posterior.
pub fn iv_from_table(posteriors: &[Vec<f64>]) -> Result<f64> {
    let c = check_table(posteriors)?;
    let mut mean = vec![0.0; c];
    for p in posteriors {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    let n = posteriors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    // renormalize away accumulated rounding before the sum-to-one check
    let s: f64 = mean.iter().sum();
    mean.iter_mut().for_each(|m| *m /= s);
    entropy(&mean)
}

/// `features[view][particle]`: mean over views of the mean pairwise cosine.
pub fn cosine_from_features(features: &[Vec<Vec<f64>>]) -> Result<f64> {
    if features.is_empty() {
        return Err(LabError::Validation("cosine similarity needs at least one view".into()));
    }
    let mut total = 0.0;
    for view in features {
        let k = view.len();
        if k < 2 {
            return Err(LabError::Validation(format!(
                "cosine similarity needs at least 2 particles, got {k}"
            )));
        }
        let mut sum = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                sum += cosine_similarity(&view[i], &view[j])?;
            }
        }
        total += sum / (k * (k - 1) / 2) as f64;
    }
    Ok(total / features.len() as f64)
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Render every particle from every camera and score the renders with the
/// classifier conditioned on the base prompt. Consumes no randomness.
pub fn evaluate<S: Renderable + Sync>(
    particles: &[S],
    cameras: &[Camera],
    render: &RenderConfig,
    classifier: &GmTeacher,
    base: &TokenMatrix,
    extractor: Extractor,
    with_cosine: bool,
) -> Result<MetricReport> {
    if particles.is_empty() || cameras.is_empty() {
        return Err(LabError::Validation("metrics need at least one particle and one view".into()));
    }
    if with_cosine && particles.len() < 2 {
        return Err(LabError::Validation(format!(
            "cosine similarity needs at least 2 particles, got {}",
            particles.len()
        )));
    }
    if render.image.len() != classifier.dim {
        return Err(LabError::Shape(format!(
            "classifier expects dim {} but renders have {}",
            classifier.dim,
            render.image.len()
        )));
    }
    let pooled = base.pool();
    let v = cameras.len();
    // (log posterior, feature) per (particle, view), flattened particle-major
    let cells = crate::par::map(particles.len() * v, |n| -> Result<(Vec<f64>, Vec<f64>)> {
        let img = particles[n / v].render(&cameras[n % v], render)?;
        let logp = classifier.classify_log_pooled(&img, &pooled)?;
        let feat = match extractor {
            Extractor::LogPosterior => logp.clone(),
            Extractor::CenteredPixels => centered(&img),
        };
        Ok((logp, feat))
    });
    let mut posteriors = vec![Vec::with_capacity(v); particles.len()];
    let mut features = vec![Vec::with_capacity(particles.len()); v];
    for (n, cell) in cells.into_iter().enumerate() {
        let (logp, feat) = cell?;
        posteriors[n / v].push(logp.into_iter().map(f64::exp).collect::<Vec<_>>());
        features[n % v].push(feat);
    }
    let table: Vec<Vec<f64>> = posteriors.iter().flatten().cloned().collect();
    Ok(MetricReport {
        iq: iq_from_table(&table)?,
        iv: iv_from_table(&table)?,
        cosine_sim: if with_cosine { Some(cosine_from_features(&features)?) } else { None },
        views: v,
        extractor_id: extractor.id().to_string(),
        posteriors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_and_uniform_tables() {
        let one_hot = vec![vec![1.0, 0.0, 0.0, 0.0]; 5];
        assert_eq!(iq_from_table(&one_hot).unwrap(), 0.0);
        assert_eq!(iv_from_table(&one_hot).unwrap(), 0.0);
        let uniform = vec![vec![0.25; 4]; 3];
        assert!((iq_from_table(&uniform).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_and_diverse_regime() {
        let table: Vec<Vec<f64>> = (0..8)
            .map(|n| {
                let mut p = vec![0.0; 4];
                p[n % 4] = 1.0;
                p
            })
            .collect();
        assert_eq!(iq_from_table(&table).unwrap(), 0.0);
        assert!((iv_from_table(&table).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let same = vec![vec![vec![1.0, 2.0], vec![1.0, 2.0]]; 3];
        assert!((cosine_from_features(&same).unwrap() - 1.0).abs() < 1e-15);
        let ortho = vec![vec![vec![1.0, 0.0], vec![0.0, 3.0]], vec![vec![0.0, -2.0], vec![5.0, 0.0]]];
        assert_eq!(cosine_from_features(&ortho).unwrap(), 0.0);
        assert!(cosine_from_features(&[vec![vec![1.0]]]).is_err());
        assert!(cosine_from_features(&[vec![vec![0.0], vec![1.0]]]).is_err());
    }

    #[test]
    fn extractor_ids_roundtrip() {
        for e in [Extractor::LogPosterior, Extractor::CenteredPixels] {
            assert_eq!(Extractor::parse(e.id()).unwrap(), e);
        }
        assert!(Extractor::parse("dino").is_err());
    }
}
