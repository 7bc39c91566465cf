use sdl_lab::distill::Method;
use sdl_lab_web::{mode_tiles, run_distill, run_field_probe, teacher_shape, to_rgba, MAX_ITERS};

#[test]
fn rgba_tiles_are_opaque_and_clamped() {
    let shape = sdl_lab::scenes::ImageShape { height: 1, width: 2, channels: 3 };
    assert_eq!(to_rgba(shape, &[0.0, 0.5, 1.0, -1.0, 2.0, 0.25]), vec![0, 128, 255, 255, 0, 255, 64, 255]);
    let s = teacher_shape();
    assert_eq!(mode_tiles().len(), 4 * s.height * s.width * 4);
}

#[test]
fn short_runs_report_every_particle() {
    for m in [Method::Sds, Method::Vsd, Method::Tsd] {
        let a = run_distill(m, 3, 50).unwrap();
        let s = teacher_shape();
        assert_eq!(a.particles, 6);
        assert_eq!(a.labels.len(), 6);
        assert_eq!(a.tiles.len(), 6 * s.height * s.width * 4);
        assert!((0.0..=1.0 + 1e-12).contains(&a.cosine_sim.abs()));
        assert_eq!(a, run_distill(m, 3, 50).unwrap());
    }
    assert!(run_distill(Method::Sds, 0, MAX_ITERS + 1).unwrap_err().is_validation());
}

#[test]
fn field_probe_separates_the_heads() {
    let r = run_field_probe(0, 300).unwrap();
    assert_eq!(r.density.violations, 0);
    assert!(r.color.violations > 0);
}
