//! Sampling-by-optimization loops: score distillation (SDS), variational
//! score distillation with a residual adapter (VSD) and textual score
//! distillation with per-particle inverted tokens and shared learnable tokens
//! (TSD), plus the two-stage run driver.

mod bench;
mod config;
mod run;
mod steps;

pub use bench::{
    bench_prompt, bench_run_config, run_bench, BenchConfig, BenchRow, BenchSummary, MethodMeans, Ordering, BENCH_CSV_HEADER,
};
pub use config::{AdapterKind, Augmentation, DistillConfig, Method, SceneConfig, SceneKind};
pub use run::{
    checkpoint_dir, init_scene, init_state, latest_checkpoint, load_checkpoint, metrics_row, read_tokens,
    root_stream, run_distillation, save_checkpoint, stage_one, token_file, verify_manifest, write_tokens,
    DistillState, FileEntry, ParamCounts, ParticleSet, RunArtifacts, RunManifest, RunOptions, METRICS_HEADER,
};
pub use steps::{
    draw, random_token_augmentation, sds_step, variational_direction, variational_step, Draw, StepContext,
    StepReport, VariationalModel,
};
