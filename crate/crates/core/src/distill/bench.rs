//! The standard SDS / VSD / TSD comparison: one 4-mode teacher, K = 6,
//! several seeds, one run directory per (method, seed).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{run_distillation, stage_one, DistillConfig, Method, RunOptions};
use crate::error::{LabError, Result};
use crate::numerics::{NoiseSchedule, RngStream};
use crate::persist::{write_atomic, write_json};
use crate::prompts::{equidistant_base, TokenMatrix};
use crate::teacher::{bench_teacher, GmTeacher, Teacher};

/// Stream id (under the run seed) of the bench's base prompt.
const PROMPT_STREAM: u64 = 77;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    pub iters: usize,
    pub methods: Vec<Method>,
    /// Skip PPM snapshots inside each run directory.
    pub skip_renders: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            iters: 5000,
            methods: vec![Method::Sds, Method::Vsd, Method::Tsd],
            skip_renders: true,
        }
    }
}

/// The base prompt for one bench seed: 4 rows whose pooled vector gives
/// every mode equal weight.
pub fn bench_prompt(teacher: &GmTeacher, seed: u64) -> Result<TokenMatrix> {
    equidistant_base(teacher, 4, 0.5, &mut RngStream::new(seed, PROMPT_STREAM))
}

/// Run configuration used for every bench cell.
pub fn bench_run_config(method: Method, seed: u64, iters: usize) -> DistillConfig {
    DistillConfig {
        seed,
        iters,
        ..DistillConfig::for_method(method)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub seed: u64,
    pub iq: f64,
    pub iv: f64,
    pub cosine_sim: f64,
    pub mean_iter_seconds: f64,
    pub variational_params: usize,
    /// TSD only: weight `w_k([y; h*_i])` on each reference's own component.
    pub inversion_weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMeans {
    pub method: Method,
    pub iq: f64,
    pub iv: f64,
    pub cosine_sim: f64,
    pub mean_iter_seconds: f64,
    pub variational_params: usize,
}

/// One directional claim `lhs < rhs` checked on means and per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub claim: String,
    pub means_hold: bool,
    pub seeds_holding: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    pub means: Vec<MethodMeans>,
    pub orderings: Vec<Ordering>,
}

pub const BENCH_CSV_HEADER: &str = "method,seed,iq,iv,cosine_sim,mean_iter_ms,variational_params";

impl BenchSummary {
    pub fn mean(&self, m: Method) -> Option<&MethodMeans> {
        self.means.iter().find(|x| x.method == m)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(BENCH_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method.id(),
                r.seed,
                r.iq,
                r.iv,
                r.cosine_sim,
                r.mean_iter_seconds * 1e3,
                r.variational_params
            ));
        }
        for m in &self.means {
            s.push_str(&format!(
                "{},mean,{},{},{},{},{}\n",
                m.method.id(),
                m.iq,
                m.iv,
                m.cosine_sim,
                m.mean_iter_seconds * 1e3,
                m.variational_params
            ));
        }
        s
    }
}

fn summarize(rows: Vec<BenchRow>, methods: &[Method]) -> BenchSummary {
    let means: Vec<MethodMeans> = methods
        .iter()
        .map(|&m| {
            let rs: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m).collect();
            let n = rs.len().max(1) as f64;
            MethodMeans {
                method: m,
                iq: rs.iter().map(|r| r.iq).sum::<f64>() / n,
                iv: rs.iter().map(|r| r.iv).sum::<f64>() / n,
                cosine_sim: rs.iter().map(|r| r.cosine_sim).sum::<f64>() / n,
                mean_iter_seconds: rs.iter().map(|r| r.mean_iter_seconds).sum::<f64>() / n,
                variational_params: rs.first().map_or(0, |r| r.variational_params),
            }
        })
        .collect();
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let cell = |m: Method, s: u64| rows.iter().find(|r| r.method == m && r.seed == s);
    let mean_of = |m: Method| means.iter().find(|x| x.method == m);
    // (claim, lower method, higher method, use iv instead of cosine)
    let claims = [
        ("cosine_sim tsd < vsd", Method::Tsd, Method::Vsd, false),
        ("cosine_sim vsd < sds", Method::Vsd, Method::Sds, false),
        ("iv tsd > vsd", Method::Vsd, Method::Tsd, true),
        ("iv tsd > sds", Method::Sds, Method::Tsd, true),
    ];
    let mut orderings = Vec::new();
    for (claim, lo, hi, by_iv) in claims {
        let (Some(a), Some(b)) = (mean_of(lo), mean_of(hi)) else { continue };
        let key = |iv: f64, cos: f64| if by_iv { iv } else { cos };
        let seeds_holding = seeds
            .iter()
            .filter(|&&s| match (cell(lo, s), cell(hi, s)) {
                (Some(x), Some(y)) => key(x.iv, x.cosine_sim) < key(y.iv, y.cosine_sim),
                _ => false,
            })
            .count();
        orderings.push(Ordering {
            claim: claim.to_string(),
            means_hold: key(a.iv, a.cosine_sim) < key(b.iv, b.cosine_sim),
            seeds_holding,
            seeds: seeds.len(),
        });
    }
    BenchSummary { rows, means, orderings }
}

/// Runs every (seed, method) cell under `out/<method>_seed<s>/` and writes
/// `bench_summary.csv` and `bench_summary.json` to `out`. `progress` is
/// called after each finished cell.
pub fn run_bench(cfg: &BenchConfig, out: &Path, mut progress: impl FnMut(&BenchRow)) -> Result<BenchSummary> {
    if cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(LabError::Validation("bench needs at least one seed and one method".into()));
    }
    let gm = bench_teacher();
    let teacher = Teacher::Gm(gm.clone());
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let base = bench_prompt(&gm, seed)?;
        for &method in &cfg.methods {
            let run_cfg = bench_run_config(method, seed, cfg.iters);
            let (hiper, weights) = if method == Method::Tsd {
                let schedule = NoiseSchedule::new(run_cfg.schedule.clone())?;
                let (refs, inv) = stage_one(&run_cfg, &teacher, &base, &schedule)?;
                let labels = refs.labels.clone().unwrap_or_default();
                let mut w = Vec::with_capacity(inv.len());
                for (r, &l) in inv.iter().zip(&labels) {
                    w.push(gm.prompt_weights(&TokenMatrix::concat(&[&base, &r.tokens])?)?[l]);
                }
                (Some(inv.into_iter().map(|r| r.tokens).collect()), Some(w))
            } else {
                (None, None)
            };
            let dir = out.join(format!("{}_seed{seed}", method.id()));
            let opts = RunOptions {
                skip_renders: cfg.skip_renders,
                ..Default::default()
            };
            let art = run_distillation(&run_cfg, &teacher, &base, hiper, &dir, &opts)?;
            let report = art
                .final_report
                .ok_or_else(|| LabError::Validation("bench teacher must be classifiable".into()))?;
            let row = BenchRow {
                method,
                seed,
                iq: report.iq,
                iv: report.iv,
                cosine_sim: report.cosine_sim.unwrap_or(f64::NAN),
                mean_iter_seconds: art.mean_iter_seconds,
                variational_params: art.param_counts.variational_model,
                inversion_weights: weights,
            };
            progress(&row);
            rows.push(row);
        }
    }
    let summary = summarize(rows, &cfg.methods);
    write_atomic(&out.join("bench_summary.csv"), summary.csv().as_bytes())?;
    write_json(&out.join("bench_summary.json"), &summary)?;
    Ok(summary)
}
