use std::fs;

use sdl_lab::distill::{
    init_state, random_token_augmentation, run_distillation, sds_step, variational_direction, variational_step,
    verify_manifest, DistillConfig, DistillState, Draw, Method, RunOptions, StepContext, VariationalModel,
};
use sdl_lab::numerics::{
    finite_diff_grad, AdamConfig, AdamState, NoiseSchedule, RngStream, ScheduleConfig, Weighting,
};
use sdl_lab::prompts::TokenMatrix;
use sdl_lab::scenes::{
    CameraConfig, ImageScene, ImageShape, RenderConfig, Renderable, Scene, VoxelScene,
};
use sdl_lab::teacher::{
    single_mode_teacher, AdapterConfig, GmTeacher, ResidualAdapter, Teacher, TeacherGeometry,
};

const SHAPE: ImageShape = ImageShape {
    height: 4,
    width: 4,
    channels: 3,
};

fn small_teacher() -> GmTeacher {
    TeacherGeometry {
        height: SHAPE.height,
        width: SHAPE.width,
        channels: SHAPE.channels,
        border: 0,
        ..Default::default()
    }
    .build()
    .unwrap()
}

fn small_config(method: Method) -> DistillConfig {
    let mut cfg = DistillConfig::for_method(method);
    cfg.render = RenderConfig::for_image(SHAPE);
    cfg.iters = 40;
    cfg.log_every = 10;
    cfg.eval_views = 4;
    cfg.render_views = 1;
    cfg.residual_adapter = AdapterConfig { hidden: vec![16] };
    cfg
}

fn base_prompt(t: &GmTeacher) -> TokenMatrix {
    TokenMatrix::zeros(2, t.embed_dim)
}

fn hiper_tokens(t: &GmTeacher, k: usize, seed: u64) -> Vec<TokenMatrix> {
    let mut rng = RngStream::new(seed, 9);
    (0..k).map(|_| TokenMatrix::random(2, t.embed_dim, 0.5, &mut rng)).collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

struct Fixture {
    teacher: Teacher,
    schedule: NoiseSchedule,
    render: RenderConfig,
    camera: CameraConfig,
}

impl Fixture {
    fn new(teacher: GmTeacher, schedule: ScheduleConfig) -> Self {
        Self {
            teacher: Teacher::Gm(teacher),
            schedule: NoiseSchedule::new(schedule).unwrap(),
            render: RenderConfig::for_image(SHAPE),
            camera: CameraConfig::default(),
        }
    }

    fn ctx(&self) -> StepContext<'_> {
        StepContext {
            teacher: &self.teacher,
            schedule: &self.schedule,
            render: &self.render,
            camera: &self.camera,
        }
    }
}

fn scene_and_adam(seed: u64) -> (ImageScene, AdamState) {
    let s = ImageScene::random(SHAPE, 0.5, &mut RngStream::new(seed, 1));
    let a = AdamState::new(s.n_params(), AdamConfig::with_lr(1e-2));
    (s, a)
}

#[test]
fn zero_weight_leaves_particle_unchanged() {
    let sched = ScheduleConfig {
        weighting: Weighting::Constant(0.0),
        ..Default::default()
    };
    let fx = Fixture::new(small_teacher(), sched);
    let (mut s, mut a) = scene_and_adam(0);
    let before = bits(s.params());
    let p = base_prompt(fx.teacher.as_gm().unwrap());
    let mut rng = RngStream::new(0, 2);
    for _ in 0..5 {
        sds_step(&fx.ctx(), &mut s, &mut a, &p, &mut rng).unwrap();
    }
    assert_eq!(bits(s.params()), before);
}

#[test]
fn point_mass_at_the_render_is_a_fixed_point() {
    let (mut s, mut a) = scene_and_adam(1);
    let mut t = single_mode_teacher(SHAPE.len(), 0.0, 2);
    let fx0 = Fixture::new(t.clone(), ScheduleConfig::default());
    t.components[0].mean = s.render(&sdl_lab::scenes::Camera::planar(0, 0), &fx0.render).unwrap();
    let mut fx = Fixture::new(t, ScheduleConfig::default());
    fx.camera.jitter = 0;
    let p = TokenMatrix::zeros(1, 2);
    let r = sds_step(&fx.ctx(), &mut s, &mut a, &p, &mut RngStream::new(1, 2)).unwrap();
    assert!(r.grad_norm < 1e-10, "{}", r.grad_norm);
}

#[test]
fn one_step_is_bit_reproducible() {
    let fx = Fixture::new(small_teacher(), ScheduleConfig::default());
    let p = base_prompt(fx.teacher.as_gm().unwrap());
    let run = || {
        let (mut s, mut a) = scene_and_adam(2);
        sds_step(&fx.ctx(), &mut s, &mut a, &p, &mut RngStream::new(2, 2)).unwrap();
        bits(s.params())
    };
    assert_eq!(run(), run());
}

#[test]
fn dirac_model_reproduces_sds_bit_exactly() {
    let fx = Fixture::new(small_teacher(), ScheduleConfig::default());
    let p = base_prompt(fx.teacher.as_gm().unwrap());
    let (mut s1, mut a1) = scene_and_adam(3);
    let (mut s2, mut a2) = scene_and_adam(3);
    let mut r1 = RngStream::new(3, 2);
    let mut r2 = RngStream::new(3, 2);
    let mut model = VariationalModel::Dirac;
    for _ in 0..50 {
        let g1 = sds_step(&fx.ctx(), &mut s1, &mut a1, &p, &mut r1).unwrap();
        let g2 = variational_step(&fx.ctx(), &mut s2, &mut a2, &mut model, &p, &mut r2, true, false).unwrap();
        assert_eq!(g1.grad_norm.to_bits(), g2.grad_norm.to_bits());
    }
    assert_eq!(bits(s1.params()), bits(s2.params()));
}

#[test]
fn zero_residual_adapter_gives_zero_particle_gradient() {
    let fx = Fixture::new(small_teacher(), ScheduleConfig::default());
    let t = fx.teacher.as_gm().unwrap();
    let p = base_prompt(t);
    let adapter = ResidualAdapter::new(t.dim, t.embed_dim, &AdapterConfig::default(), &mut RngStream::new(4, 0));
    let adam = AdamState::new(adapter.n_params(), AdamConfig::with_lr(1e-3));
    let mut model = VariationalModel::Residual { adapter, adam };
    let (mut s, mut a) = scene_and_adam(4);
    let before = bits(s.params());
    let r = variational_step(&fx.ctx(), &mut s, &mut a, &mut model, &p, &mut RngStream::new(4, 2), true, false).unwrap();
    assert_eq!(r.grad_norm, 0.0);
    assert_eq!(bits(s.params()), before);
    assert!(r.model_loss.is_some());
}

#[test]
fn coinciding_conditionings_give_zero_particle_gradient() {
    let fx = Fixture::new(small_teacher(), ScheduleConfig::default());
    let d = fx.teacher.as_gm().unwrap().embed_dim;
    // integer rows and power-of-two row counts keep every pooled mean exact
    let vals: Vec<f64> = (0..4 * d).map(|j| ((j * 7) % 5) as f64 - 2.0).collect();
    let prompt = TokenMatrix::from_flat(4, d, vals).unwrap();
    let mean = prompt.pool();
    let phi = TokenMatrix::from_flat(4, d, mean.repeat(4)).unwrap();
    assert_eq!(
        bits(&TokenMatrix::concat(&[&prompt, &phi]).unwrap().pool()),
        bits(&mean)
    );
    let adam = AdamState::new(phi.as_slice().len(), AdamConfig::with_lr(1e-3));
    let model = VariationalModel::SharedTokens { tokens: phi, adam };
    let (s, _) = scene_and_adam(5);
    let mut rng = RngStream::new(5, 2);
    for _ in 0..20 {
        let draw = sdl_lab::distill::draw(&fx.ctx(), &mut rng).unwrap();
        let dir = variational_direction(&fx.ctx(), &s, &model, &prompt, &draw).unwrap();
        assert!(dir.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn inverted_and_base_tokens_stay_frozen() {
    let t = small_teacher();
    let mut cfg = small_config(Method::Tsd);
    cfg.particles = 3;
    let base = base_prompt(&t);
    let h = hiper_tokens(&t, 3, 6);
    let teacher = Teacher::Gm(t);
    let mut state = init_state(&cfg, &teacher, &base, Some(&h)).unwrap();
    let prompts: Vec<Vec<u64>> = state.particles.prompts.iter().map(|p| bits(p.as_slice())).collect();
    let shared_before = bits(state.model.params());
    let schedule = NoiseSchedule::default();
    let ctx = StepContext {
        teacher: &teacher,
        schedule: &schedule,
        render: &cfg.render,
        camera: &cfg.camera,
    };
    for _ in 0..1000 {
        state.step(&ctx, &cfg).unwrap();
    }
    for (i, p) in state.particles.prompts.iter().enumerate() {
        assert_eq!(bits(p.as_slice()), prompts[i]);
        let expect = TokenMatrix::concat(&[&base, &h[i]]).unwrap();
        assert_eq!(bits(p.as_slice()), bits(expect.as_slice()));
    }
    assert_ne!(bits(state.model.params()), shared_before, "shared tokens should train");
}

#[test]
fn particle_selection_is_uniform() {
    let t = small_teacher();
    let cfg = small_config(Method::Sds);
    let teacher = Teacher::Gm(t.clone());
    let mut state: DistillState = init_state(&cfg, &teacher, &base_prompt(&t), None).unwrap();
    let schedule = NoiseSchedule::default();
    let ctx = StepContext {
        teacher: &teacher,
        schedule: &schedule,
        render: &cfg.render,
        camera: &cfg.camera,
    };
    let n = 10_000;
    let mut counts = vec![0usize; cfg.particles];
    for _ in 0..n {
        counts[state.step(&ctx, &cfg).unwrap().0] += 1;
    }
    let expected = n as f64 / cfg.particles as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let p = 1.0 - ChiSquared::new((cfg.particles - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}, counts {counts:?}");
}

#[test]
fn adapter_loss_decreases_on_a_frozen_batch() {
    let fx = Fixture::new(small_teacher(), ScheduleConfig::default());
    let t = fx.teacher.as_gm().unwrap();
    let p = base_prompt(t);
    let (s, _) = scene_and_adam(7);
    let mut rng = RngStream::new(7, 2);
    let batch: Vec<(Vec<f64>, Draw)> = (0..8)
        .map(|_| {
            let d = sdl_lab::distill::draw(&fx.ctx(), &mut rng).unwrap();
            (s.render(&d.camera, &fx.render).unwrap(), d)
        })
        .collect();
    let adapter = ResidualAdapter::new(t.dim, t.embed_dim, &AdapterConfig { hidden: vec![32] }, &mut RngStream::new(7, 0));
    let adam = AdamState::new(adapter.n_params(), AdamConfig::with_lr(1e-3));
    let mut model = VariationalModel::Residual { adapter, adam };
    let batch_loss = |m: &VariationalModel| -> f64 {
        batch.iter().map(|(x, d)| m.loss(&fx.ctx(), x, d, &p).unwrap()).sum::<f64>() / batch.len() as f64
    };
    let before = batch_loss(&model);
    for i in 0..100 {
        let (x, d) = &batch[i % batch.len()];
        model.fit_step(&fx.ctx(), x, d, &p).unwrap();
    }
    let after = batch_loss(&model);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn pullback_matches_finite_differences() {
    let fx = Fixture::new(small_teacher(), ScheduleConfig::default());
    let p = base_prompt(fx.teacher.as_gm().unwrap());
    let mut rng = RngStream::new(8, 0);
    let mut vol = Fixture::new(small_teacher(), ScheduleConfig::default());
    vol.camera = CameraConfig::orbit();
    vol.render.samples_per_ray = 12;
    for inst in 0..20 {
        let phi = TokenMatrix::random(2, 8, 0.5, &mut rng);
        let adam = AdamState::new(phi.as_slice().len(), AdamConfig::default());
        let model = VariationalModel::SharedTokens { tokens: phi, adam };
        let scene = if inst % 2 == 0 {
            Scene::Image(ImageScene::random(SHAPE, 1.0, &mut rng))
        } else {
            Scene::Voxel(VoxelScene::random(4, 3, 1.0, &mut rng).unwrap())
        };
        let f = if inst % 2 == 0 { &fx } else { &vol };
        let d = sdl_lab::distill::draw(&f.ctx(), &mut rng).unwrap();
        let dir = variational_direction(&f.ctx(), &scene, &model, &p, &d).unwrap();
        let analytic = scene.render_vjp(&d.camera, &f.render, &dir).unwrap();
        let mut probe = scene.clone();
        let numeric = finite_diff_grad(
            |theta| {
                probe.params_mut().copy_from_slice(theta);
                let img = probe.render(&d.camera, &f.render).unwrap();
                img.iter().zip(&dir).map(|(a, b)| a * b).sum()
            },
            scene.params(),
            1e-5,
        )
        .unwrap();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        assert!(diff / scale < 1e-4, "instance {inst}: rel err {}", diff / scale);
    }
}

#[test]
fn sds_converges_to_a_point_mass() {
    let t = single_mode_teacher(SHAPE.len(), 0.0, 2);
    let mut cfg = small_config(Method::Sds);
    cfg.particles = 1;
    cfg.iters = 5000;
    cfg.log_every = 5000;
    cfg.camera.jitter = 0;
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        skip_renders: true,
        ..Default::default()
    };
    let teacher = Teacher::Gm(t.clone());
    let art = run_distillation(&cfg, &teacher, &TokenMatrix::zeros(1, 2), None, dir.path(), &opts).unwrap();
    let img = art.state.particles.scenes[0]
        .render(&sdl_lab::scenes::Camera::planar(0, 0), &cfg.render)
        .unwrap();
    let mae: f64 = img.iter().zip(&t.components[0].mean).map(|(a, b)| (a - b).abs()).sum::<f64>() / img.len() as f64;
    assert!(mae < 0.05, "mean abs error {mae}");
}

#[test]
fn tsd_run_writes_tokens_and_checkpoints() {
    let t = small_teacher();
    let cfg = small_config(Method::Tsd);
    let dir = tempfile::tempdir().unwrap();
    let teacher = Teacher::Gm(t.clone());
    let h = hiper_tokens(&t, cfg.particles, 10);
    let art = run_distillation(&cfg, &teacher, &base_prompt(&t), Some(h), dir.path(), &RunOptions::default()).unwrap();
    for i in 0..6 {
        assert!(dir.path().join(format!("tokens/tokens_particle_{i}.json")).exists());
        assert!(dir.path().join(format!("checkpoints/iter_40/particle_{i}.bin")).exists());
    }
    assert!(!dir.path().join("checkpoints/iter_40/particle_6.bin").exists());
    assert_eq!(art.param_counts.variational_model, 64);
    let m = verify_manifest(dir.path()).unwrap();
    assert_eq!(m.iterations, 40);
    assert!(art.final_report.is_some());
}

#[test]
fn shared_tokens_are_far_smaller_than_the_adapter() {
    let t = small_teacher();
    let teacher = Teacher::Gm(t.clone());
    let count = |m: Method, h: Option<&[TokenMatrix]>| {
        let mut cfg = DistillConfig::for_method(m);
        cfg.render = RenderConfig::for_image(SHAPE);
        init_state(&cfg, &teacher, &base_prompt(&t), h).unwrap().model.n_params()
    };
    let h = hiper_tokens(&t, 6, 11);
    let shared = count(Method::Tsd, Some(&h));
    let residual = count(Method::Vsd, None);
    assert_eq!(shared, 64);
    assert!(residual >= 10 * shared, "{residual} vs {shared}");
}

fn checkpoint_bytes(out: &std::path::Path, iter: usize) -> Vec<(String, Vec<u8>)> {
    let dir = out.join(format!("checkpoints/iter_{iter}"));
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn logging_cadence_does_not_change_the_trajectory() {
    let t = small_teacher();
    let teacher = Teacher::Gm(t.clone());
    let run = |log_every: usize| {
        let mut cfg = small_config(Method::Vsd);
        cfg.log_every = log_every;
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            skip_renders: true,
            ..Default::default()
        };
        run_distillation(&cfg, &teacher, &base_prompt(&t), None, dir.path(), &opts).unwrap();
        checkpoint_bytes(dir.path(), 40)
    };
    assert_eq!(run(10), run(20));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let t = small_teacher();
    let teacher = Teacher::Gm(t.clone());
    let base = base_prompt(&t);
    let h = hiper_tokens(&t, 6, 12);
    let cfg = small_config(Method::Tsd);
    let opts = RunOptions::default();

    let full = tempfile::tempdir().unwrap();
    run_distillation(&cfg, &teacher, &base, Some(h.clone()), full.path(), &opts).unwrap();

    let part = tempfile::tempdir().unwrap();
    let mut short = cfg.clone();
    short.iters = 20;
    run_distillation(&short, &teacher, &base, Some(h.clone()), part.path(), &opts).unwrap();
    let resume = RunOptions {
        resume: true,
        ..Default::default()
    };
    run_distillation(&cfg, &teacher, &base, Some(h), part.path(), &resume).unwrap();

    assert_eq!(checkpoint_bytes(full.path(), 40), checkpoint_bytes(part.path(), 40));
    let metrics = |d: &std::path::Path| fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(full.path()), metrics(part.path()));
}

#[test]
fn random_token_prompts_are_distinct_and_seeded() {
    let base = TokenMatrix::zeros(2, 8);
    let a = random_token_augmentation(&base, 6, 3, 1.0, &mut RngStream::new(13, 0)).unwrap();
    let b = random_token_augmentation(&base, 6, 3, 1.0, &mut RngStream::new(13, 0)).unwrap();
    assert_eq!(a, b);
    for i in 0..6 {
        assert_eq!(a[i].rows(), 5);
        assert_eq!(&a[i].as_slice()[..16], base.as_slice());
        for j in 0..i {
            assert_ne!(a[i], a[j]);
        }
    }
    assert!(random_token_augmentation(&base, 0, 3, 1.0, &mut RngStream::new(0, 0)).is_err());
}

#[test]
fn invalid_runs_are_rejected_before_creating_the_directory() {
    let t = small_teacher();
    let teacher = Teacher::Gm(t.clone());
    let mut cfg = small_config(Method::Tsd);
    cfg.adapter = sdl_lab::distill::AdapterKind::Residual;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let err = run_distillation(&cfg, &teacher, &base_prompt(&t), None, &out, &RunOptions::default()).unwrap_err();
    assert!(err.is_validation());
    assert!(!out.exists());
}

#[test]
fn dimension_mismatch_is_a_validation_error() {
    let mut fx = Fixture::new(small_teacher(), ScheduleConfig::default());
    fx.render = RenderConfig::for_image(ImageShape {
        height: 3,
        width: 3,
        channels: 3,
    });
    let s = ImageScene::zeros(fx.render.image);
    let mut a = AdamState::new(s.n_params(), AdamConfig::default());
    let mut s = s;
    let p = TokenMatrix::zeros(1, 8);
    let err = sds_step(&fx.ctx(), &mut s, &mut a, &p, &mut RngStream::new(0, 0)).unwrap_err();
    assert!(err.is_validation());
}
