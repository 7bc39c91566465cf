use sdl_lab::numerics::{finite_diff_grad, log_sum_exp, NoiseSchedule, RngStream};
use sdl_lab::prompts::{equidistant_base, TokenMatrix};
use sdl_lab::teacher::{
    bench_teacher, ddim_sample, mlp_teacher_train, single_mode_teacher, Component, Denoiser, GmTeacher,
    MlpTrainConfig,
};

fn random_mixture(rng: &mut RngStream, dim: usize, k: usize, embed: usize) -> GmTeacher {
    GmTeacher {
        dim,
        embed_dim: embed,
        cond_temperature: rng.uniform_range(0.5, 2.0),
        components: (0..k)
            .map(|_| Component {
                mean: rng.normal_vec(dim),
                s: rng.uniform_range(0.2, 1.0),
                anchor: rng.normal_vec(embed),
            })
            .collect(),
        image: None,
    }
}

/// Explicitly summed `log p_t(x_t | e)`.
fn log_density(t: &GmTeacher, x: &[f64], alpha: f64, sigma: f64, pooled: &[f64]) -> f64 {
    let logits: Vec<f64> = t
        .components
        .iter()
        .map(|c| c.anchor.iter().zip(pooled).map(|(a, p)| a * p).sum::<f64>() / t.cond_temperature)
        .collect();
    let lz = log_sum_exp(&logits);
    let terms: Vec<f64> = t
        .components
        .iter()
        .zip(&logits)
        .map(|(c, l)| {
            let v = alpha * alpha * c.s * c.s + sigma * sigma;
            let sq: f64 = x.iter().zip(&c.mean).map(|(xi, m)| (xi - alpha * m).powi(2)).sum();
            l - lz - 0.5 * sq / v - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * v).ln()
        })
        .collect();
    log_sum_exp(&terms)
}

#[test]
fn eps_matches_finite_difference_score() {
    let sched = NoiseSchedule::default();
    let mut rng = RngStream::new(100, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = 2 + rng.index(4);
        let k = 1 + rng.index(4);
        let t = random_mixture(&mut rng, dim, k, 3);
        let tp = sched.eval(rng.uniform_int(1, 1000) as usize).unwrap();
        let pooled = rng.normal_vec(3);
        let x: Vec<f64> = rng.normal_vec(dim);
        let eps = t.eps_pooled(&x, tp, &pooled).unwrap().eps;
        let g = finite_diff_grad(|y| log_density(&t, y, tp.alpha, tp.sigma, &pooled), &x, 1e-5).unwrap();
        let fd: Vec<f64> = g.iter().map(|v| -tp.sigma * v).collect();
        let err: f64 = eps.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(err / scale);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn classify_matches_brute_force_bayes() {
    let mut rng = RngStream::new(101, 0);
    for _ in 0..100 {
        let dim = 1 + rng.index(3);
        let k = 2 + rng.index(3);
        let t = random_mixture(&mut rng, dim, k, 2);
        let pooled = rng.normal_vec(2);
        let x = rng.normal_vec(dim);
        let got = t.classify_pooled(&x, &pooled).unwrap();
        let prior: Vec<f64> = t
            .components
            .iter()
            .map(|c| (c.anchor.iter().zip(&pooled).map(|(a, p)| a * p).sum::<f64>() / t.cond_temperature).exp())
            .collect();
        let joint: Vec<f64> = t
            .components
            .iter()
            .zip(&prior)
            .map(|(c, w)| {
                let sq: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m) * (a - m)).sum();
                w * (-0.5 * sq / (c.s * c.s)).exp() / (2.0 * std::f64::consts::PI * c.s * c.s).powf(dim as f64 / 2.0)
            })
            .collect();
        let z: f64 = joint.iter().sum();
        for (g, j) in got.iter().zip(&joint) {
            assert!((g - j / z).abs() < 1e-9, "{g} vs {}", j / z);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ddim_collapses_to_a_point_mass() {
    let t = single_mode_teacher(16, 0.0, 2);
    let x = ddim_sample(&t, &[0.0, 0.0], 50, &mut RngStream::new(102, 0), &NoiseSchedule::default()).unwrap();
    let err = x.iter().zip(&t.components[0].mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-2, "{err}");
}

#[test]
fn single_ddim_step_is_the_one_shot_prediction() {
    let t = single_mode_teacher(6, 0.3, 2);
    let sched = NoiseSchedule::default();
    let x = ddim_sample(&t, &[0.0, 0.0], 1, &mut RngStream::new(103, 0), &sched).unwrap();
    let x_t = RngStream::new(103, 0).normal_vec(6);
    let tp = sched.eval(sched.n_steps()).unwrap();
    let eps = t.predict_pooled(&x_t, tp, &[0.0, 0.0]).unwrap();
    let x0: Vec<f64> = x_t.iter().zip(&eps).map(|(xi, e)| (xi - tp.sigma * e) / tp.alpha).collect();
    assert_eq!(x, x0);
    assert!(ddim_sample(&t, &[0.0, 0.0], 0, &mut RngStream::new(0, 0), &sched).is_err());
}

#[test]
fn ddim_covers_every_mode() {
    let t = bench_teacher();
    let base = equidistant_base(&t, 4, 0.5, &mut RngStream::new(104, 1)).unwrap();
    let pooled = base.pool();
    let sched = NoiseSchedule::default();
    let mut rng = RngStream::new(104, 0);
    let mut hits = vec![0usize; t.n_components()];
    for _ in 0..512 {
        let x = ddim_sample(&t, &pooled, 50, &mut rng, &sched).unwrap();
        let p = t.classify_pooled(&x, &pooled).unwrap();
        let k = (0..p.len()).max_by(|a, b| p[*a].total_cmp(&p[*b])).unwrap();
        hits[k] += 1;
    }
    assert!(hits.iter().all(|&h| h >= 1), "{hits:?}");
}

#[test]
fn mlp_teacher_learns_a_single_mode() {
    let gm = single_mode_teacher(4, 0.1, 2);
    let pooled = vec![0.0, 0.0];
    let mut rng = RngStream::new(105, 0);
    let samples: Vec<Vec<f64>> = gm.sample_pooled(&pooled, 2000, &mut rng).unwrap().into_iter().map(|(_, x)| x).collect();
    let sched = NoiseSchedule::default();
    let cfg = MlpTrainConfig {
        iters: 3000,
        seed: 5,
        ..Default::default()
    };
    let (m, report) = mlp_teacher_train(&samples, &pooled, &sched, &cfg).unwrap();
    assert!(
        report.final_holdout_loss <= 0.5 * report.initial_holdout_loss,
        "{} -> {}",
        report.initial_holdout_loss,
        report.final_holdout_loss
    );
    // compare with the exact denoiser at mid-range t
    let tp = sched.eval(500).unwrap();
    let mut test_rng = RngStream::new(105, 1);
    let mut total = 0.0;
    let n = 200;
    for _ in 0..n {
        let x0 = &samples[test_rng.index(samples.len())];
        let x_t: Vec<f64> = x0.iter().map(|x| tp.alpha * x + tp.sigma * test_rng.normal()).collect();
        let a = m.predict_pooled(&x_t, tp, &pooled).unwrap();
        let b = gm.predict_pooled(&x_t, tp, &pooled).unwrap();
        total += a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    }
    let mean = total / n as f64;
    assert!(mean < 0.1 * tp.sigma, "mean L2 {mean} vs sigma {}", tp.sigma);
}

#[test]
fn mlp_training_is_deterministic_and_validated() {
    let gm = single_mode_teacher(3, 0.2, 2);
    let pooled = vec![0.0, 0.0];
    let samples: Vec<Vec<f64>> = gm
        .sample_pooled(&pooled, 1000, &mut RngStream::new(106, 0))
        .unwrap()
        .into_iter()
        .map(|(_, x)| x)
        .collect();
    let sched = NoiseSchedule::default();
    let cfg = MlpTrainConfig {
        iters: 50,
        hidden: vec![16],
        ..Default::default()
    };
    let a = mlp_teacher_train(&samples, &pooled, &sched, &cfg).unwrap();
    let b = mlp_teacher_train(&samples, &pooled, &sched, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.loss_trace, b.1.loss_trace);
    assert!(mlp_teacher_train(&samples[..999], &pooled, &sched, &cfg).is_err());
}

#[test]
fn prompt_weights_are_probability_vectors() {
    let t = bench_teacher();
    let mut rng = RngStream::new(107, 0);
    for _ in 0..50 {
        let p = TokenMatrix::random(3, t.embed_dim, 3.0, &mut rng);
        let w = t.prompt_weights(&p).unwrap();
        assert!(w.iter().all(|v| *v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
