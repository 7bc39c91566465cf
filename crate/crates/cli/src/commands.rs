use std::fs;
use std::path::{Path, PathBuf};

use sdl_lab::distill::{
    bench_prompt, init_state, latest_checkpoint, load_checkpoint, metrics_row, read_tokens, run_bench,
    run_distillation, stage_one, write_tokens, Augmentation, BenchConfig, DistillConfig, Method, RunOptions,
};
use sdl_lab::metrics::{evaluate, Extractor, PAPER_VIEWS};
use sdl_lab::numerics::{NoiseSchedule, RngStream};
use sdl_lab::persist::{contact_sheet, read_json, write_json, write_ppm};
use sdl_lab::probes::{field_convexity_probe, potential_convexity_probe, write_reports, ProbeReport};
use sdl_lab::prompts::{PromptSpec, TokenMatrix};
use sdl_lab::scenes::{GridMlpField, ImageShape, RenderConfig, Renderable};
use sdl_lab::teacher::{bench_teacher, Denoiser, GmTeacher, Teacher, TeacherGeometry};

use crate::config::{load, InvertConfig, ProbeConfig, RunConfig};
use crate::rundir::in_run_dir;
use crate::{BenchArgs, Cli, CliError, Command, DistillArgs, EvaluateArgs, ExtractorArg, InvertArgs, MakeTeacherArgs, ProbeArgs, ProbeKind};

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::MakeTeacher(a) => make_teacher(cli, a),
        Command::Invert(a) => invert(cli, a),
        Command::Distill(a) => distill(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a),
        Command::Probe(a) => probe(cli, a),
        Command::Bench(a) => bench(cli, a),
    }
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    path.map_or_else(|| Ok(T::default()), load)
}

fn load_teacher(path: &Path) -> Result<Teacher, CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!("teacher file {} not found", path.display())));
    }
    let t: Teacher = read_json(path)?;
    if let Some(g) = t.as_gm() {
        g.validate()?;
    }
    Ok(t)
}

fn load_prompt(path: &Path, teacher: &Teacher) -> Result<PromptSpec, CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!("prompt file {} not found", path.display())));
    }
    let p: PromptSpec = read_json(path)?;
    p.validate()?;
    if p.embed_dim() != teacher.embed_dim() {
        return Err(CliError::Validation(format!(
            "prompt width {} differs from teacher embedding dim {}",
            p.embed_dim(),
            teacher.embed_dim()
        )));
    }
    Ok(p)
}

fn image_shape(teacher: &Teacher, fallback: ImageShape) -> Option<ImageShape> {
    match teacher.as_gm().and_then(|g| g.image) {
        Some(s) => Some(s),
        None => (fallback.len() == teacher.dim()).then_some(fallback),
    }
}

fn classifier_of(teacher: &Teacher) -> Result<&GmTeacher, CliError> {
    teacher
        .as_gm()
        .filter(|g| g.classifiable())
        .ok_or_else(|| CliError::Validation("metrics need a mixture teacher with positive spread".into()))
}

fn make_teacher(cli: &Cli, a: &MakeTeacherArgs) -> Result<(), CliError> {
    let mut g: TeacherGeometry = load_or_default(cli.config.as_deref())?;
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { g.$f = v; } )* };
    }
    set!(modes, height, width, channels, spread, embed_dim, anchor_scale, temperature, border);
    g.validate()?;
    if a.classify && g.spread <= 0.0 {
        return Err(CliError::Validation("classification needs spread > 0; a point mass has no posterior".into()));
    }
    let gm = g.build()?;
    let seed = cli.seed.unwrap_or(0);
    let base = bench_prompt(&gm, seed)?;
    let weights = gm.prompt_weights(&base)?;
    let shape = gm.image.expect("geometry teachers are images");
    let run = RunConfig {
        teacher: "teacher.json".into(),
        prompt: "prompt.json".into(),
        tokens: Some("tokens".into()),
        distill: DistillConfig {
            seed,
            render: RenderConfig::for_image(shape),
            ..DistillConfig::default()
        },
    };
    in_run_dir(&cli.out, || {
        write_json(&cli.out.join("teacher.json"), &Teacher::Gm(gm.clone()))?;
        write_json(&cli.out.join("prompt.json"), &PromptSpec::new(base.clone()))?;
        write_json(&cli.out.join("run_config.json"), &run)?;
        for k in 0..gm.n_components() {
            write_ppm(&cli.out.join(format!("mode_{k}.ppm")), shape, &gm.components[k].mean)?;
        }
        Ok(())
    })?;
    println!("teacher: {} components, dim {}, embed dim {}", gm.n_components(), gm.dim, gm.embed_dim);
    println!("{:>4} {:>8} {:>10} {:>10} {:>8}", "k", "s", "|anchor|", "mean", "w(y)");
    for (k, c) in gm.components.iter().enumerate() {
        let norm = c.anchor.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mean = c.mean.iter().sum::<f64>() / c.mean.len() as f64;
        println!("{k:>4} {:>8.4} {norm:>10.4} {mean:>10.4} {:>8.4}", c.s, weights[k]);
    }
    println!("wrote {}", cli.out.display());
    Ok(())
}

fn invert(cli: &Cli, a: &InvertArgs) -> Result<(), CliError> {
    let mut ic: InvertConfig = load_or_default(cli.config.as_deref())?;
    if let Some(k) = a.particles {
        ic.particles = k;
    }
    if ic.particles == 0 {
        return Err(CliError::Validation("particles must be >= 1".into()));
    }
    let teacher_path = a.teacher.clone().unwrap_or_else(|| cli.out.join("teacher.json"));
    let prompt_path = a.prompt.clone().unwrap_or_else(|| cli.out.join("prompt.json"));
    let teacher = load_teacher(&teacher_path)?;
    let prompt = load_prompt(&prompt_path, &teacher)?;
    let cfg = DistillConfig {
        seed: cli.seed.unwrap_or(0),
        particles: ic.particles,
        stratified_references: ic.stratified_references,
        inversion: ic.inversion.clone(),
        ..DistillConfig::for_method(Method::Tsd)
    };
    let schedule = NoiseSchedule::new(cfg.schedule.clone())?;
    let dir = cli.out.join("tokens");
    let summary = in_run_dir(&cli.out, || {
        let (refs, inv) = stage_one(&cfg, &teacher, &prompt.base, &schedule)?;
        let tokens: Vec<TokenMatrix> = inv.iter().map(|r| r.tokens.clone()).collect();
        write_tokens(&dir, &prompt.base, &tokens)?;
        if let Some(shape) = image_shape(&teacher, cfg.render.image) {
            for (i, img) in refs.images.iter().enumerate() {
                write_ppm(&dir.join(format!("reference_{i}.ppm")), shape, img)?;
            }
        }
        let mut rows = Vec::new();
        for (i, r) in inv.iter().enumerate() {
            let label = refs.labels.as_ref().map(|l| l[i]);
            let weight = match (teacher.as_gm(), label) {
                (Some(g), Some(l)) => Some(g.prompt_weights(&TokenMatrix::concat(&[&prompt.base, &r.tokens])?)?[l]),
                _ => None,
            };
            rows.push(serde_json::json!({
                "particle": i,
                "reference_label": label,
                "weight_on_label": weight,
                "initial_eval_loss": r.initial_eval_loss,
                "final_eval_loss": r.final_eval_loss,
            }));
        }
        let summary = serde_json::json!({ "seed": cfg.seed, "teacher_hash": teacher.spec_hash(), "particles": rows });
        write_json(&dir.join("inversion_summary.json"), &summary)?;
        Ok(summary)
    })?;
    for r in summary["particles"].as_array().into_iter().flatten() {
        println!(
            "particle {}: label {} weight {:.4} loss {:.5} -> {:.5}",
            r["particle"],
            r["reference_label"],
            r["weight_on_label"].as_f64().unwrap_or(f64::NAN),
            r["initial_eval_loss"].as_f64().unwrap_or(f64::NAN),
            r["final_eval_loss"].as_f64().unwrap_or(f64::NAN)
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn distill(cli: &Cli, a: &DistillArgs) -> Result<(), CliError> {
    let run = match cli.config.as_deref() {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            load::<RunConfig>(p)?.resolve(&base)
        }
        None => RunConfig {
            teacher: cli.out.join("teacher.json"),
            prompt: cli.out.join("prompt.json"),
            tokens: None,
            distill: DistillConfig::default(),
        },
    };
    let mut cfg = run.distill.clone();
    if let Some(m) = a.method {
        let m: Method = m.into();
        if m != cfg.method {
            let canon = DistillConfig::for_method(m);
            cfg.method = m;
            cfg.augmentation = canon.augmentation;
            cfg.adapter = canon.adapter;
        }
    }
    if let Some(n) = a.iters {
        cfg.iters = n;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let teacher = load_teacher(&run.teacher)?;
    let prompt = load_prompt(&run.prompt, &teacher)?;
    if teacher.dim() != cfg.render.image.len() {
        return Err(CliError::Validation(format!(
            "teacher dim {} differs from the {}x{}x{} render",
            teacher.dim(),
            cfg.render.image.height,
            cfg.render.image.width,
            cfg.render.image.channels
        )));
    }
    let hiper = if cfg.augmentation == Augmentation::Hiper {
        let dir = run.tokens.clone().unwrap_or_else(|| cli.out.join("tokens"));
        Some(read_tokens(&dir, cfg.particles)?)
    } else {
        None
    };
    let opts = RunOptions {
        resume: a.resume,
        skip_renders: a.skip_renders,
        ..Default::default()
    };
    let art = in_run_dir(&cli.out, || {
        for (src, name) in [(&run.teacher, "teacher.json"), (&run.prompt, "prompt.json")] {
            let dst = cli.out.join(name);
            if !same_file(src, &dst) {
                fs::copy(src, &dst).map_err(|e| CliError::Runtime(format!("copy {}: {e}", src.display())))?;
            }
        }
        Ok(run_distillation(&cfg, &teacher, &prompt.base, hiper.clone(), &cli.out, &opts)?)
    })?;
    println!(
        "{} seed {}: {} iterations, {:.4} ms/iter, variational params {}",
        cfg.method.id(),
        cfg.seed,
        art.state.iter,
        art.mean_iter_seconds * 1e3,
        art.param_counts.variational_model
    );
    if let Some(r) = &art.final_report {
        let cos = r.cosine_sim.map_or("-".to_string(), |c| format!("{c:.4}"));
        println!("iq {:.4} iv {:.4} cosine {cos}", r.iq, r.iv);
    }
    println!("wrote {}", cli.out.display());
    Ok(())
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    let ckpt = match &a.checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(&cli.out)
            .map(|(_, p)| p)
            .ok_or_else(|| CliError::Validation(format!("no checkpoints under {}", cli.out.display())))?,
    };
    if !ckpt.join("state.json").exists() {
        return Err(CliError::Validation(format!("{} is not a checkpoint", ckpt.display())));
    }
    let run_dir: PathBuf = ckpt
        .parent()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .ok_or_else(|| CliError::Validation("checkpoint must sit in <run>/checkpoints/".into()))?;
    let cfg: DistillConfig = load(&run_dir.join("config.json"))?;
    let teacher = load_teacher(&run_dir.join("teacher.json"))?;
    let prompt = load_prompt(&run_dir.join("prompt.json"), &teacher)?;
    let classifier = classifier_of(&teacher)?;
    let hiper = match cfg.augmentation {
        Augmentation::Hiper => Some(read_tokens(&run_dir.join("tokens"), cfg.particles)?),
        _ => None,
    };
    let views = match (a.views, a.preset) {
        (Some(v), _) => v,
        (None, Some(_)) => PAPER_VIEWS,
        (None, None) => cfg.eval_views,
    };
    if views == 0 {
        return Err(CliError::Validation("views must be >= 1".into()));
    }
    let extractor = match a.extractor {
        Some(ExtractorArg::LogPosterior) => Extractor::LogPosterior,
        Some(ExtractorArg::CenteredPixels) => Extractor::CenteredPixels,
        None => cfg.extractor,
    };
    let with_cosine = !a.no_cosine;
    if with_cosine && cfg.particles < 2 {
        return Err(CliError::Validation(format!(
            "cosine similarity needs at least 2 particles, run has {}; pass --no-cosine",
            cfg.particles
        )));
    }
    let mut state = init_state(&cfg, &teacher, &prompt.base, hiper.as_deref())?;
    load_checkpoint(&ckpt, &mut state, cfg.method)?;
    let cams = cfg.camera.eval_views(views);
    let scenes = &state.particles.scenes;
    let report = in_run_dir(&run_dir, || {
        let report = evaluate(scenes, &cams, &cfg.render, classifier, &prompt.base, extractor, with_cosine)?;
        let stem = format!("evaluate_iter_{}_{}_v{views}", state.iter, extractor.id());
        write_json(&run_dir.join("reports").join(format!("{stem}.json")), &report)?;
        let metrics = run_dir.join("metrics.csv");
        let mut text = fs::read_to_string(&metrics).unwrap_or_else(|_| format!("{}\n", sdl_lab::distill::METRICS_HEADER));
        text.push_str(&metrics_row(state.iter, cfg.method, cfg.seed, &report));
        text.push('\n');
        sdl_lab::persist::write_atomic(&metrics, text.as_bytes())?;

        let cols = views.min(8);
        let picked: Vec<usize> = (0..cols).map(|c| c * views / cols).collect();
        let mut tiles = Vec::new();
        for s in scenes {
            for &v in &picked {
                tiles.push(s.render(&cams[v], &cfg.render)?);
            }
        }
        let (shape, sheet) = contact_sheet(cfg.render.image, &tiles, cols)?;
        write_ppm(&run_dir.join("reports").join(format!("{stem}_contact_sheet.ppm")), shape, &sheet)?;
        Ok(report)
    })?;
    let cos = report.cosine_sim.map_or("-".to_string(), |c| format!("{c:.6}"));
    println!(
        "{}: iq {:.6} iv {:.6} cosine {cos} ({} views, {})",
        ckpt.display(),
        report.iq,
        report.iv,
        report.views,
        report.extractor_id
    );
    Ok(())
}

fn print_probe(r: &ProbeReport) {
    println!(
        "{:<24} segments {:>5} violations {:>5} fraction {:.4} max {:.3e}",
        r.name, r.n_segments, r.violations, r.violation_fraction, r.max_violation
    );
}

fn probe(cli: &Cli, a: &ProbeArgs) -> Result<(), CliError> {
    let mut pc: ProbeConfig = load_or_default(cli.config.as_deref())?;
    if let Some(n) = a.segments {
        pc.potential.n_segments = n;
        pc.field.n_segments = n;
    }
    let seed = cli.seed.unwrap_or(0);
    let root = RngStream::new(seed, 0x7072_6f62);
    let schedule = NoiseSchedule::default();
    let reports = match a.kind {
        ProbeKind::Lemma1 => {
            let teachers: Vec<(String, GmTeacher)> = match &a.teacher {
                Some(p) => {
                    let t = load_teacher(p)?;
                    let g = t
                        .as_gm()
                        .ok_or_else(|| CliError::Validation("the potential probe needs a mixture teacher".into()))?;
                    vec![(format!("lemma1_{}_mode", g.n_components()), g.clone())]
                }
                None => {
                    let full = bench_teacher();
                    let mut one = full.clone();
                    one.components.truncate(1);
                    let mut two = full;
                    two.components.truncate(2);
                    vec![("lemma1_single_mode".into(), one), ("lemma1_two_mode".into(), two)]
                }
            };
            let mut out = Vec::new();
            for (i, (name, g)) in teachers.iter().enumerate() {
                let prompt = TokenMatrix::zeros(1, g.embed_dim);
                out.push(potential_convexity_probe(
                    name,
                    g,
                    &prompt,
                    &schedule,
                    &pc.potential,
                    &mut root.substream(i as u64),
                )?);
            }
            out
        }
        ProbeKind::Lemma2 => {
            let s = &pc.field_shape;
            let field = GridMlpField::random(s.resolution, s.features, s.hidden, s.channels, &mut root.substream(10))?;
            field_convexity_probe(&field, &pc.field, &mut root.substream(11))?.all()
        }
    };
    let stem = match a.kind {
        ProbeKind::Lemma1 => "probe_lemma1",
        ProbeKind::Lemma2 => "probe_lemma2",
    };
    in_run_dir(&cli.out, || Ok(write_reports(&cli.out, stem, &reports)?))?;
    reports.iter().for_each(print_probe);
    println!("wrote {}", cli.out.join(format!("{stem}.json")).display());
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<(), CliError> {
    let mut cfg: BenchConfig = load_or_default(cli.config.as_deref())?;
    if let Some(n) = a.iters {
        cfg.iters = n;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = &a.methods {
        cfg.methods = m.iter().map(|&x| x.into()).collect();
    }
    if a.renders {
        cfg.skip_renders = false;
    }
    if cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(CliError::Validation("bench needs at least one seed and one method".into()));
    }
    let summary = in_run_dir(&cli.out, || {
        Ok(run_bench(&cfg, &cli.out, |r| {
            println!(
                "{} seed {}: iq {:.4} iv {:.4} cosine {:.4} {:.4} ms/iter",
                r.method.id(),
                r.seed,
                r.iq,
                r.iv,
                r.cosine_sim,
                r.mean_iter_seconds * 1e3
            );
        })?)
    })?;
    for m in &summary.means {
        println!(
            "mean {}: iq {:.4} iv {:.4} cosine {:.4} {:.4} ms/iter, {} variational params",
            m.method.id(),
            m.iq,
            m.iv,
            m.cosine_sim,
            m.mean_iter_seconds * 1e3,
            m.variational_params
        );
    }
    for o in &summary.orderings {
        println!(
            "{:<22} means {} seeds {}/{}",
            o.claim,
            if o.means_hold { "hold" } else { "fail" },
            o.seeds_holding,
            o.seeds
        );
    }
    println!("wrote {}", cli.out.join("bench_summary.csv").display());
    Ok(())
}
