use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{NoiseSchedule, RngStream};
use crate::prompts::TokenMatrix;
use crate::teacher::{ddim_sample, Teacher};

/// `K` reference images drawn from the prior under the base prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub images: Vec<Vec<f64>>,
    /// Diagnostic argmax labels from the exact classifier, when one exists.
    pub labels: Option<Vec<usize>>,
    pub teacher_hash: String,
    pub seed: u64,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn distinct_labels(&self) -> usize {
        let mut l = self.labels.clone().unwrap_or_default();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Sample `K` independent references conditioned on `base`.
///
/// Mixture teachers are sampled exactly; `stratified` replaces independent
/// component draws with systematic sampling of the weight CDF. Learned
/// teachers go through 50-step DDIM.
pub fn sample_references(
    teacher: &Teacher,
    base: &TokenMatrix,
    k: usize,
    stratified: bool,
    rng: &mut RngStream,
    schedule: &NoiseSchedule,
) -> Result<ReferenceSet> {
    if k == 0 {
        return Err(LabError::Validation("need at least one reference".into()));
    }
    let pooled = base.pool();
    let seed = rng.seed();
    match teacher {
        Teacher::Gm(gm) => {
            let images = if stratified {
                let w = gm.weights(&pooled)?;
                let u0 = rng.uniform();
                (0..k)
                    .map(|i| {
                        let u = (i as f64 + u0) / k as f64;
                        let mut acc = 0.0;
                        let comp = w
                            .iter()
                            .position(|wk| {
                                acc += wk;
                                u < acc
                            })
                            .unwrap_or(w.len() - 1);
                        let c = &gm.components[comp];
                        c.mean.iter().map(|m| m + c.s * rng.normal()).collect()
                    })
                    .collect()
            } else {
                gm.sample_pooled(&pooled, k, rng)?.into_iter().map(|(_, x)| x).collect::<Vec<_>>()
            };
            let labels = if gm.classifiable() {
                Some(
                    images
                        .iter()
                        .map(|x| gm.classify_pooled(x, &pooled).map(|p| argmax(&p)))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            Ok(ReferenceSet {
                images,
                labels,
                teacher_hash: gm.spec_hash(),
                seed,
            })
        }
        Teacher::Mlp(_) => {
            let images = (0..k)
                .map(|_| ddim_sample(teacher, &pooled, 50, rng, schedule))
                .collect::<Result<Vec<_>>>()?;
            Ok(ReferenceSet {
                images,
                labels: None,
                teacher_hash: teacher.spec_hash(),
                seed,
            })
        }
    }
}
