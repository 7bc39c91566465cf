use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::distill::steps::{sds_step, variational_step, StepContext, StepReport, VariationalModel};
use crate::distill::{random_token_augmentation, AdapterKind, Augmentation, DistillConfig, Method, SceneKind};
use crate::error::{LabError, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::numerics::{AdamConfig, AdamState, NoiseSchedule, RngState, RngStream};
use crate::persist::{read_array, read_json, sha256_file, write_array, write_atomic, write_json, write_ppm};
use crate::prompts::{invert_hiper, sample_references, InversionResult, PromptSpec, ReferenceSet, TokenMatrix};
use crate::scenes::{GridMlpField, ImageScene, Renderable, Scene, VoxelScene};
use crate::teacher::{Denoiser, GmTeacher, ResidualAdapter, Teacher};

// Substream indices of the run's root stream.
const STREAM_SCENES: u64 = 0;
const STREAM_SELECTOR: u64 = 1;
const STREAM_REFERENCES: u64 = 2;
const STREAM_INVERSION: u64 = 3;
const STREAM_AUGMENT: u64 = 4;
const STREAM_MODEL: u64 = 5;
const STREAM_PERTURB: u64 = 6;
const STREAM_PARTICLES: u64 = 1000;

pub const METRICS_HEADER: &str = "iter,method,iq,iv,cosine_sim,V,extractor_id,seed";

/// The `K` particles and everything private to each of them.
#[derive(Clone, Debug)]
pub struct ParticleSet {
    pub scenes: Vec<Scene>,
    pub adam: Vec<AdamState>,
    pub rngs: Vec<RngStream>,
    /// The prompt each particle is conditioned on (`y`, `[y; h*_i]` or `[y; z_i]`).
    pub prompts: Vec<TokenMatrix>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Mutable state of a distillation run between iterations.
#[derive(Clone, Debug)]
pub struct DistillState {
    pub iter: usize,
    pub particles: ParticleSet,
    pub model: VariationalModel,
    pub selector: RngStream,
}

pub fn root_stream(seed: u64) -> RngStream {
    RngStream::new(seed, 0)
}

pub fn init_scene(cfg: &DistillConfig, rng: &mut RngStream) -> Result<Scene> {
    let s = &cfg.scene;
    let channels = cfg.render.image.channels;
    Ok(match s.kind {
        SceneKind::Image => Scene::Image(ImageScene::random(cfg.render.image, s.init_scale, rng)),
        SceneKind::Voxel => {
            let mut v = VoxelScene::random(s.voxel_resolution, channels, s.init_scale, rng)?;
            v.extent = cfg.render.extent;
            v.density_logits_mut().iter_mut().for_each(|d| *d += s.density_init);
            Scene::Voxel(v)
        }
        SceneKind::Field => {
            let mut f = GridMlpField::random(s.voxel_resolution, s.field_features, s.field_hidden, channels, rng)?;
            f.extent = cfg.render.extent;
            Scene::Field(f)
        }
    })
}

/// Stage 1: sample references under the base prompt and invert one block of
/// HiPer tokens per particle.
pub fn stage_one(
    cfg: &DistillConfig,
    teacher: &Teacher,
    base: &TokenMatrix,
    schedule: &NoiseSchedule,
) -> Result<(ReferenceSet, Vec<InversionResult>)> {
    let root = root_stream(cfg.seed);
    let refs = sample_references(
        teacher,
        base,
        cfg.particles,
        cfg.stratified_references,
        &mut root.substream(STREAM_REFERENCES),
        schedule,
    )?;
    let inv_root = root.substream(STREAM_INVERSION);
    let results = crate::par::map(refs.len(), |i| {
        invert_hiper(teacher, &refs.images[i], base, &cfg.inversion, &inv_root.substream(i as u64), schedule)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((refs, results))
}

/// Fresh stage-2 state. `hiper` must hold one token block per particle when
/// the configuration uses HiPer augmentation.
pub fn init_state(cfg: &DistillConfig, teacher: &Teacher, base: &TokenMatrix, hiper: Option<&[TokenMatrix]>) -> Result<DistillState> {
    cfg.validate()?;
    let root = root_stream(cfg.seed);
    let k = cfg.particles;
    let mut scene_rng = root.substream(STREAM_SCENES);
    let scenes = (0..k).map(|_| init_scene(cfg, &mut scene_rng)).collect::<Result<Vec<_>>>()?;
    let prompts = match cfg.augmentation {
        Augmentation::None => vec![base.clone(); k],
        Augmentation::Hiper => {
            let h = hiper.ok_or_else(|| LabError::Validation("hiper augmentation needs inverted tokens".into()))?;
            if h.len() != k {
                return Err(LabError::Validation(format!("expected {k} token blocks, got {}", h.len())));
            }
            h.iter().map(|hi| TokenMatrix::concat(&[base, hi])).collect::<Result<Vec<_>>>()?
        }
        Augmentation::RandomTokens => random_token_augmentation(
            base,
            k,
            cfg.augment_tokens,
            cfg.augment_scale,
            &mut root.substream(STREAM_AUGMENT),
        )?,
    };
    let adam_cfg = AdamConfig::with_lr(cfg.particle_lr);
    let adam = scenes.iter().map(|s| AdamState::new(s.n_params(), adam_cfg)).collect();
    let rngs = (0..k).map(|i| root.substream(STREAM_PARTICLES + i as u64)).collect();
    let mut model_rng = root.substream(STREAM_MODEL);
    let model_adam = AdamConfig::with_lr(cfg.adapter_lr);
    let model = match cfg.adapter {
        AdapterKind::None => VariationalModel::Dirac,
        AdapterKind::Residual => {
            let adapter = ResidualAdapter::new(teacher.dim(), teacher.embed_dim(), &cfg.residual_adapter, &mut model_rng);
            let adam = AdamState::new(adapter.n_params(), model_adam);
            VariationalModel::Residual { adapter, adam }
        }
        AdapterKind::SharedTokens => {
            let tokens = TokenMatrix::random(cfg.shared_tokens, base.dim(), cfg.shared_init_scale, &mut model_rng);
            let adam = AdamState::new(tokens.as_slice().len(), model_adam);
            VariationalModel::SharedTokens { tokens, adam }
        }
    };
    Ok(DistillState {
        iter: 0,
        particles: ParticleSet {
            scenes,
            adam,
            rngs,
            prompts,
        },
        model,
        selector: root.substream(STREAM_SELECTOR),
    })
}

impl DistillState {
    /// One iteration: pick a particle uniformly, update it, then update the
    /// variational model once.
    pub fn step(&mut self, ctx: &StepContext, cfg: &DistillConfig) -> Result<(usize, StepReport)> {
        let i = self.selector.index(self.particles.len());
        let p = &mut self.particles;
        let report = match cfg.method {
            Method::Sds => sds_step(ctx, &mut p.scenes[i], &mut p.adam[i], &p.prompts[i], &mut p.rngs[i]),
            Method::Vsd | Method::Tsd => variational_step(
                ctx,
                &mut p.scenes[i],
                &mut p.adam[i],
                &mut self.model,
                &p.prompts[i],
                &mut p.rngs[i],
                true,
                cfg.adapter_fresh_draw,
            ),
        }
        .map_err(|e| match e {
            LabError::Numeric(detail) => LabError::Optimization { iter: self.iter, detail },
            other => other,
        })?;
        self.iter += 1;
        Ok((i, report))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    iter: usize,
    method: Method,
    particles: usize,
    particle_rngs: Vec<RngState>,
    particle_adam_steps: Vec<u64>,
    selector: RngState,
    model_kind: AdapterKind,
    model_adam_step: Option<u64>,
}

fn adapter_kind(model: &VariationalModel) -> AdapterKind {
    match model {
        VariationalModel::Dirac => AdapterKind::None,
        VariationalModel::Residual { .. } => AdapterKind::Residual,
        VariationalModel::SharedTokens { .. } => AdapterKind::SharedTokens,
    }
}

pub fn checkpoint_dir(out: &Path, iter: usize) -> PathBuf {
    out.join("checkpoints").join(format!("iter_{iter}"))
}

/// Write scene parameters as flat binaries with sidecars, plus optimizer and
/// RNG state needed to resume bit-exactly.
pub fn save_checkpoint(dir: &Path, state: &DistillState, method: Method) -> Result<()> {
    let p = &state.particles;
    for (i, (scene, adam)) in p.scenes.iter().zip(&p.adam).enumerate() {
        write_array(dir, &format!("particle_{i}"), scene.kind(), scene.shape_info(), scene.params())?;
        write_array(dir, &format!("adam_{i}_m"), "adam_moment", serde_json::Value::Null, &adam.first_moment)?;
        write_array(dir, &format!("adam_{i}_v"), "adam_moment", serde_json::Value::Null, &adam.second_moment)?;
    }
    if let Some(adam) = state.model.adam() {
        write_array(dir, "model", "variational_model", serde_json::json!({ "n_params": state.model.n_params() }), state.model.params())?;
        write_array(dir, "model_adam_m", "adam_moment", serde_json::Value::Null, &adam.first_moment)?;
        write_array(dir, "model_adam_v", "adam_moment", serde_json::Value::Null, &adam.second_moment)?;
    }
    let meta = CheckpointMeta {
        iter: state.iter,
        method,
        particles: p.len(),
        particle_rngs: p.rngs.iter().map(|r| r.state()).collect(),
        particle_adam_steps: p.adam.iter().map(|a| a.step_count).collect(),
        selector: state.selector.state(),
        model_kind: adapter_kind(&state.model),
        model_adam_step: state.model.adam().map(|a| a.step_count),
    };
    write_json(&dir.join("state.json"), &meta)
}

fn load_into(dir: &Path, stem: &str, target: &mut [f64]) -> Result<()> {
    let (_, values) = read_array(dir, stem)?;
    if values.len() != target.len() {
        return Err(LabError::Validation(format!(
            "checkpoint array {stem} has {} values, expected {}",
            values.len(),
            target.len()
        )));
    }
    target.copy_from_slice(&values);
    Ok(())
}

/// Overwrite a freshly initialized state with a checkpoint.
pub fn load_checkpoint(dir: &Path, state: &mut DistillState, method: Method) -> Result<()> {
    let meta: CheckpointMeta = read_json(&dir.join("state.json"))?;
    if meta.method != method || meta.particles != state.particles.len() || meta.model_kind != adapter_kind(&state.model) {
        return Err(LabError::Validation(format!(
            "checkpoint {} does not match the run configuration",
            dir.display()
        )));
    }
    let p = &mut state.particles;
    for i in 0..p.len() {
        load_into(dir, &format!("particle_{i}"), p.scenes[i].params_mut())?;
        load_into(dir, &format!("adam_{i}_m"), &mut p.adam[i].first_moment)?;
        load_into(dir, &format!("adam_{i}_v"), &mut p.adam[i].second_moment)?;
        p.adam[i].step_count = meta.particle_adam_steps[i];
        p.rngs[i] = RngStream::from_state(meta.particle_rngs[i]);
    }
    if state.model.adam().is_some() {
        load_into(dir, "model", state.model.params_mut())?;
        let adam = state.model.adam_mut().expect("checked above");
        load_into(dir, "model_adam_m", &mut adam.first_moment)?;
        load_into(dir, "model_adam_v", &mut adam.second_moment)?;
        adam.step_count = meta.model_adam_step.unwrap_or(0);
    }
    state.selector = RngStream::from_state(meta.selector);
    state.iter = meta.iter;
    Ok(())
}

/// Latest `checkpoints/iter_<n>` with a complete `state.json`.
pub fn latest_checkpoint(out: &Path) -> Option<(usize, PathBuf)> {
    let entries = fs::read_dir(out.join("checkpoints")).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: usize = name.strip_prefix("iter_")?.parse().ok()?;
            e.path().join("state.json").exists().then(|| (n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
}

pub fn metrics_row(iter: usize, method: Method, seed: u64, r: &MetricReport) -> String {
    let cos = r.cosine_sim.map(|c| c.to_string()).unwrap_or_default();
    format!("{iter},{},{},{},{cos},{},{},{seed}", method.id(), r.iq, r.iv, r.views, r.extractor_id)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from the latest checkpoint in the output directory.
    pub resume: bool,
    /// Classifier for metrics; defaults to the teacher when it is a mixture.
    pub classifier: Option<GmTeacher>,
    /// Skip PPM render snapshots (metrics and checkpoints are still written).
    pub skip_renders: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamCounts {
    pub per_particle: usize,
    pub variational_model: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: DistillConfig,
    pub teacher_hash: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub iterations: usize,
    pub mean_iter_seconds: f64,
    pub param_counts: ParamCounts,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub state: DistillState,
    pub final_report: Option<MetricReport>,
    pub mean_iter_seconds: f64,
    pub param_counts: ParamCounts,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn file_inventory(out: &Path) -> Result<Vec<FileEntry>> {
    let mut files = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).map_err(|e| LabError::io(&dir, e))? {
            let path = e.map_err(|e| LabError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(out).expect("inside out dir").to_string_lossy().replace('\\', "/");
            if rel == "manifest.json" || rel.ends_with(".lock") {
                continue;
            }
            files.push(FileEntry {
                sha256: sha256_file(&path)?,
                path: rel,
            });
        }
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

/// Verify every manifest entry against the files on disk.
pub fn verify_manifest(out: &Path) -> Result<RunManifest> {
    let m: RunManifest = read_json(&out.join("manifest.json"))?;
    for f in &m.files {
        let got = sha256_file(&out.join(&f.path))?;
        if got != f.sha256 {
            return Err(LabError::Validation(format!("checksum mismatch for {}", f.path)));
        }
    }
    Ok(m)
}

pub fn token_file(out: &Path, i: usize) -> PathBuf {
    out.join("tokens").join(format!("tokens_particle_{i}.json"))
}

/// Write per-particle prompt specs for HiPer tokens.
pub fn write_tokens(dir: &Path, base: &TokenMatrix, tokens: &[TokenMatrix]) -> Result<()> {
    for (i, h) in tokens.iter().enumerate() {
        let spec = PromptSpec {
            base: base.clone(),
            hiper: Some(h.clone()),
            shared: None,
        };
        write_json(&dir.join(format!("tokens_particle_{i}.json")), &spec)?;
    }
    Ok(())
}

pub fn read_tokens(dir: &Path, k: usize) -> Result<Vec<TokenMatrix>> {
    let missing: Vec<String> = (0..k)
        .map(|i| dir.join(format!("tokens_particle_{i}.json")))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(LabError::Validation(format!("missing token files: {}", missing.join(", "))));
    }
    (0..k)
        .map(|i| {
            let spec: PromptSpec = read_json(&dir.join(format!("tokens_particle_{i}.json")))?;
            spec.hiper
                .ok_or_else(|| LabError::Validation(format!("tokens_particle_{i}.json has no hiper block")))
        })
        .collect()
}

fn write_renders(out: &Path, cfg: &DistillConfig, state: &DistillState) -> Result<()> {
    let dir = out.join("renders").join(format!("iter_{}", state.iter));
    let views = cfg.camera.eval_views(cfg.render_views.max(1));
    let mut tiles = Vec::new();
    for (i, scene) in state.particles.scenes.iter().enumerate() {
        for (v, cam) in views.iter().enumerate() {
            let img = scene.render(cam, &cfg.render)?;
            write_ppm(&dir.join(format!("particle_{i}_view_{v}.ppm")), cfg.render.image, &img)?;
            tiles.push(img);
        }
    }
    let (shape, sheet) = crate::persist::contact_sheet(cfg.render.image, &tiles, views.len())?;
    write_ppm(&dir.join("contact_sheet.ppm"), shape, &sheet)
}

/// Stage 2 driver (running stage 1 first when HiPer tokens are needed and
/// not supplied). Writes the run directory layout under `out`.
pub fn run_distillation(
    cfg: &DistillConfig,
    teacher: &Teacher,
    base: &TokenMatrix,
    hiper: Option<Vec<TokenMatrix>>,
    out: &Path,
    opts: &RunOptions,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if teacher.dim() != cfg.render.image.len() {
        return Err(LabError::Validation(format!(
            "teacher dim {} differs from render dim {}",
            teacher.dim(),
            cfg.render.image.len()
        )));
    }
    if base.dim() != teacher.embed_dim() {
        return Err(LabError::Validation("base prompt width differs from teacher embedding dim".into()));
    }
    if cfg.stage2_teacher_perturbation.is_some() && teacher.as_gm().is_none() {
        return Err(LabError::Validation("teacher perturbation needs a mixture teacher".into()));
    }
    let schedule = NoiseSchedule::new(cfg.schedule.clone())?;
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let _ = fs::remove_file(out.join(".failed"));
    run_body(cfg, teacher, base, hiper, out, opts, &schedule).inspect_err(|e| {
        let _ = write_atomic(&out.join(".failed"), format!("{e}\n").as_bytes());
    })
}

fn run_body(
    cfg: &DistillConfig,
    teacher: &Teacher,
    base: &TokenMatrix,
    hiper: Option<Vec<TokenMatrix>>,
    out: &Path,
    opts: &RunOptions,
    schedule: &NoiseSchedule,
) -> Result<RunArtifacts> {
    let started = unix_now();
    write_json(&out.join("config.json"), cfg)?;

    let hiper = match (cfg.augmentation, hiper) {
        (Augmentation::Hiper, Some(h)) => {
            write_tokens(&out.join("tokens"), base, &h)?;
            Some(h)
        }
        (Augmentation::Hiper, None) => {
            let (refs, inv) = stage_one(cfg, teacher, base, schedule)?;
            let h: Vec<TokenMatrix> = inv.into_iter().map(|r| r.tokens).collect();
            write_tokens(&out.join("tokens"), base, &h)?;
            for (i, img) in refs.images.iter().enumerate() {
                write_ppm(&out.join("tokens").join(format!("reference_{i}.ppm")), cfg.render.image, img)?;
            }
            Some(h)
        }
        _ => None,
    };

    let stage2_teacher;
    let teacher2 = match (cfg.stage2_teacher_perturbation, teacher) {
        (Some(scale), Teacher::Gm(gm)) => {
            stage2_teacher = Teacher::Gm(gm.perturbed(scale, &mut root_stream(cfg.seed).substream(STREAM_PERTURB)));
            &stage2_teacher
        }
        _ => teacher,
    };
    let classifier = opts
        .classifier
        .clone()
        .or_else(|| teacher.as_gm().filter(|g| g.classifiable()).cloned());
    let ctx = StepContext {
        teacher: teacher2,
        schedule,
        render: &cfg.render,
        camera: &cfg.camera,
    };

    let mut state = init_state(cfg, teacher, base, hiper.as_deref())?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics_lines = vec![METRICS_HEADER.to_string()];
    if opts.resume {
        if let Some((n, dir)) = latest_checkpoint(out) {
            load_checkpoint(&dir, &mut state, cfg.method)?;
            if let Ok(text) = fs::read_to_string(&metrics_path) {
                metrics_lines.extend(
                    text.lines()
                        .skip(1)
                        .filter(|l| l.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_some_and(|it| it <= n))
                        .map(str::to_string),
                );
            }
        }
    }
    let eval_cams = cfg.camera.eval_views(cfg.eval_views);
    let with_cosine = cfg.particles >= 2;
    let evaluate_now = |state: &DistillState| -> Result<Option<MetricReport>> {
        classifier
            .as_ref()
            .map(|c| evaluate(&state.particles.scenes, &eval_cams, &cfg.render, c, base, cfg.extractor, with_cosine))
            .transpose()
    };
    let mut last_report = None;
    let snapshot = |state: &DistillState, lines: &mut Vec<String>, last: &mut Option<MetricReport>| -> Result<()> {
        save_checkpoint(&checkpoint_dir(out, state.iter), state, cfg.method)?;
        if let Some(r) = evaluate_now(state)? {
            lines.push(metrics_row(state.iter, cfg.method, cfg.seed, &r));
            write_json(&out.join("reports").join(format!("metrics_iter_{}.json", state.iter)), &r)?;
            *last = Some(r);
        }
        write_atomic(&metrics_path, (lines.join("\n") + "\n").as_bytes())?;
        if !opts.skip_renders {
            write_renders(out, cfg, state)?;
        }
        Ok(())
    };
    if state.iter == 0 {
        snapshot(&state, &mut metrics_lines, &mut last_report)?;
    }

    let mut step_seconds = 0.0;
    let mut steps_timed = 0usize;
    while state.iter < cfg.iters {
        let t0 = Instant::now();
        let res = state.step(&ctx, cfg);
        step_seconds += t0.elapsed().as_secs_f64();
        steps_timed += 1;
        res?;
        if state.iter % cfg.log_every == 0 || state.iter == cfg.iters {
            snapshot(&state, &mut metrics_lines, &mut last_report)?;
        }
    }
    if last_report.is_none() {
        last_report = evaluate_now(&state)?;
    }

    let mean_iter_seconds = if steps_timed > 0 { step_seconds / steps_timed as f64 } else { 0.0 };
    let param_counts = ParamCounts {
        per_particle: state.particles.scenes[0].n_params(),
        variational_model: state.model.n_params(),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        teacher_hash: teacher.spec_hash(),
        seeds: vec![cfg.seed],
        started_unix: started,
        finished_unix: unix_now(),
        iterations: state.iter,
        mean_iter_seconds,
        param_counts: param_counts.clone(),
        files: file_inventory(out)?,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunArtifacts {
        out_dir: out.to_path_buf(),
        state,
        final_report: last_report,
        mean_iter_seconds,
        param_counts,
    })
}
