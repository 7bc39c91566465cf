//! Browser demo: the standard 4-mode teacher, a short SDS / VSD / TSD run
//! and the radiance-field convexity probe, all in-page.

use wasm_bindgen::prelude::*;

use sdl_lab::distill::{bench_prompt, bench_run_config, init_state, stage_one, Method, StepContext};
use sdl_lab::metrics::evaluate;
use sdl_lab::numerics::{NoiseSchedule, RngStream};
use sdl_lab::probes::{field_convexity_probe, FieldProbeConfig, FieldProbeReport};
use sdl_lab::prompts::TokenMatrix;
use sdl_lab::scenes::{Camera, GridMlpField, ImageShape, Renderable};
use sdl_lab::teacher::{bench_teacher, Teacher};
use sdl_lab::Result;

/// Longest run the page accepts.
pub const MAX_ITERS: usize = 20_000;

/// RGB in `[0, 1]` to opaque RGBA bytes.
pub fn to_rgba(shape: ImageShape, pixels: &[f64]) -> Vec<u8> {
    let c = shape.channels;
    let mut out = Vec::with_capacity(shape.height * shape.width * 4);
    for px in pixels.chunks(c) {
        for k in 0..3 {
            let v = px[k.min(c - 1)];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

pub fn teacher_shape() -> ImageShape {
    bench_teacher().image.expect("bench teacher is an image")
}

/// Component means, one RGBA tile after another.
pub fn mode_tiles() -> Vec<u8> {
    let t = bench_teacher();
    let shape = teacher_shape();
    t.components.iter().flat_map(|c| to_rgba(shape, &c.mean)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillOutcome {
    pub method: Method,
    /// One RGBA tile per particle, front view.
    pub tiles: Vec<u8>,
    pub particles: usize,
    pub iq: f64,
    pub iv: f64,
    pub cosine_sim: f64,
    pub variational_params: usize,
    /// Argmax class of each particle's front view.
    pub labels: Vec<usize>,
}

/// Short in-memory run of the bench cell `(method, seed)`.
pub fn run_distill(method: Method, seed: u64, iters: usize) -> Result<DistillOutcome> {
    if iters > MAX_ITERS {
        return Err(sdl_lab::LabError::Validation(format!("at most {MAX_ITERS} iterations in the browser")));
    }
    let gm = bench_teacher();
    let teacher = Teacher::Gm(gm.clone());
    let base = bench_prompt(&gm, seed)?;
    let cfg = bench_run_config(method, seed, iters);
    let schedule = NoiseSchedule::new(cfg.schedule.clone())?;
    let hiper = if method == Method::Tsd {
        let (_, inv) = stage_one(&cfg, &teacher, &base, &schedule)?;
        Some(inv.into_iter().map(|r| r.tokens).collect::<Vec<TokenMatrix>>())
    } else {
        None
    };
    let mut state = init_state(&cfg, &teacher, &base, hiper.as_deref())?;
    let ctx = StepContext {
        teacher: &teacher,
        schedule: &schedule,
        render: &cfg.render,
        camera: &cfg.camera,
    };
    while state.iter < iters {
        state.step(&ctx, &cfg)?;
    }
    let scenes = &state.particles.scenes;
    let cams = cfg.camera.eval_views(cfg.eval_views);
    let report = evaluate(scenes, &cams, &cfg.render, &gm, &base, cfg.extractor, true)?;
    let front = Camera::planar(0, 0);
    let mut tiles = Vec::new();
    let mut labels = Vec::new();
    for s in scenes {
        let img = s.render(&front, &cfg.render)?;
        let post = gm.classify(&img, &base)?;
        labels.push((0..post.len()).max_by(|&a, &b| post[a].total_cmp(&post[b])).unwrap_or(0));
        tiles.extend(to_rgba(cfg.render.image, &img));
    }
    Ok(DistillOutcome {
        method,
        tiles,
        particles: scenes.len(),
        iq: report.iq,
        iv: report.iv,
        cosine_sim: report.cosine_sim.unwrap_or(f64::NAN),
        variational_params: state.model.n_params(),
        labels,
    })
}

/// Field probe on a random 4^3 grid with a 16-unit MLP.
pub fn run_field_probe(seed: u64, segments: usize) -> Result<FieldProbeReport> {
    let root = RngStream::new(seed, 0x7072_6f62);
    let field = GridMlpField::random(4, 4, 16, 3, &mut root.substream(10))?;
    let cfg = FieldProbeConfig {
        n_segments: segments,
        ..Default::default()
    };
    field_convexity_probe(&field, &cfg, &mut root.substream(11))
}

fn js_err(e: sdl_lab::LabError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = imageWidth)]
pub fn image_width() -> usize {
    teacher_shape().width
}

#[wasm_bindgen(js_name = imageHeight)]
pub fn image_height() -> usize {
    teacher_shape().height
}

#[wasm_bindgen(js_name = teacherModes)]
pub fn teacher_modes() -> Vec<u8> {
    mode_tiles()
}

#[wasm_bindgen]
pub struct DistillView {
    inner: DistillOutcome,
}

#[wasm_bindgen]
impl DistillView {
    pub fn tiles(&self) -> Vec<u8> {
        self.inner.tiles.clone()
    }

    /// Metrics and labels as a JSON object.
    pub fn summary(&self) -> String {
        let o = &self.inner;
        serde_json::json!({
            "method": o.method.id(),
            "particles": o.particles,
            "iq": o.iq,
            "iv": o.iv,
            "cosine_sim": o.cosine_sim,
            "variational_params": o.variational_params,
            "labels": o.labels,
        })
        .to_string()
    }
}

#[wasm_bindgen]
pub fn distill(method: &str, seed: u32, iters: u32) -> Result<DistillView, JsError> {
    let m = Method::parse(method).map_err(js_err)?;
    run_distill(m, seed as u64, iters as usize)
        .map(|inner| DistillView { inner })
        .map_err(js_err)
}

/// Violation counts for the four segment families, as JSON.
#[wasm_bindgen(js_name = probeField)]
pub fn probe_field(seed: u32, segments: u32) -> Result<String, JsError> {
    let r = run_field_probe(seed as u64, segments as usize).map_err(js_err)?;
    let rows: Vec<_> = r
        .all()
        .iter()
        .map(|p| serde_json::json!({ "name": p.name, "violations": p.violations, "segments": p.n_segments, "fraction": p.violation_fraction }))
        .collect();
    Ok(serde_json::Value::from(rows).to_string())
}
