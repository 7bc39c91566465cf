use proptest::prelude::*;
use sdl_lab::numerics::{dot, finite_diff_grad, norm, RngStream};
use sdl_lab::scenes::{
    composite_weights, ray_sample_points, Camera, GridMlpField, ImageScene, ImageShape, RenderConfig, Renderable, Scene, VoxelScene,
};

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-12)
}

fn check_scene(scene: &Scene, camera: &Camera, cfg: &RenderConfig, rng: &mut RngStream) -> f64 {
    let d = cfg.image.len();
    let up = rng.normal_vec(d);
    let analytic = scene.render_vjp(camera, cfg, &up).unwrap();
    let mut probe = scene.clone();
    let fd = finite_diff_grad(
        |theta| {
            probe.params_mut().copy_from_slice(theta);
            dot(&up, &probe.render(camera, cfg).unwrap())
        },
        scene.params(),
        1e-4,
    )
    .unwrap();
    rel_err(&analytic, &fd)
}

fn small_cfg(channels: usize, samples: usize) -> RenderConfig {
    let mut cfg = RenderConfig::for_image(ImageShape { height: 8, width: 8, channels });
    cfg.samples_per_ray = samples;
    cfg
}

fn camera(rng: &mut RngStream) -> Camera {
    Camera::orbit(
        rng.uniform_range(0.0, std::f64::consts::TAU),
        rng.uniform_range(-0.6, 0.8),
        3.0,
    )
}

#[test]
fn image_scene_gradients_match_finite_differences() {
    let mut rng = RngStream::new(11, 0);
    for _ in 0..20 {
        let shape = ImageShape { height: 5, width: 4, channels: 3 };
        let scene = Scene::Image(ImageScene::random(shape, 2.0, &mut rng));
        let dx = rng.uniform_int(-2, 2) as i32;
        let dy = rng.uniform_int(-2, 2) as i32;
        let err = check_scene(&scene, &Camera::planar(dx, dy), &RenderConfig::for_image(shape), &mut rng);
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn voxel_scene_gradients_match_finite_differences() {
    let mut rng = RngStream::new(12, 0);
    for _ in 0..20 {
        let scene = Scene::Voxel(VoxelScene::random(4, 3, 1.0, &mut rng).unwrap());
        let cam = camera(&mut rng);
        let err = check_scene(&scene, &cam, &small_cfg(3, 12), &mut rng);
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn field_gradients_match_finite_differences() {
    let mut rng = RngStream::new(13, 0);
    let cfg = small_cfg(3, 8);
    let mut checked = 0;
    while checked < 20 {
        let field = GridMlpField::random(3, 3, 6, 3, &mut rng).unwrap();
        let cam = camera(&mut rng);
        // finite differences are only meaningful away from ReLU kinks
        let margin = ray_sample_points(&cam, &cfg)
            .unwrap()
            .into_iter()
            .map(|p| field.relu_margin(p))
            .fold(f64::INFINITY, f64::min);
        if margin < 2e-3 {
            continue;
        }
        let err = check_scene(&Scene::Field(field), &cam, &cfg, &mut rng);
        assert!(err < 1e-4, "{err}");
        checked += 1;
    }
}

#[test]
fn rendering_is_deterministic() {
    let mut rng = RngStream::new(14, 0);
    let scene = VoxelScene::random(4, 3, 1.0, &mut rng).unwrap();
    let cam = camera(&mut rng);
    let cfg = small_cfg(3, 16);
    assert_eq!(scene.render(&cam, &cfg).unwrap(), scene.render(&cam, &cfg).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rendered_pixels_stay_in_unit_interval(seed in 0u64..10_000, scale in 0.1f64..6.0) {
        let mut rng = RngStream::new(seed, 1);
        let scene = VoxelScene::random(4, 3, scale, &mut rng).unwrap();
        let cam = camera(&mut rng);
        let img = scene.render(&cam, &small_cfg(3, 8)).unwrap();
        prop_assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn compositing_weights_partition_unity(sig in proptest::collection::vec(0.0f64..200.0, 1..64), delta in 1e-4f64..1.0) {
        let (w, t) = composite_weights(&sig, delta);
        prop_assert!((w.iter().sum::<f64>() + t - 1.0).abs() < 1e-6);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
    }
}
