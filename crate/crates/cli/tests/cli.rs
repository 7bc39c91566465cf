use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdl_lab::distill::verify_manifest;
use sdl_lab::persist::decode_ppm;

fn sdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdl-lab"))
        .args(args)
        .env_remove("SDL_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn teacher_dir(root: &Path, name: &str) -> PathBuf {
    let d = root.join(name);
    let o = sdl(&["make-teacher", "--out", s(&d), "--classify"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    d
}

/// Small TSD run config next to `dir`'s teacher.
fn small_config(dir: &Path, particles: usize) -> PathBuf {
    let text = fs::read_to_string(dir.join("run_config.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["distill"]["iters"] = 40.into();
    v["distill"]["log_every"] = 20.into();
    v["distill"]["eval_views"] = 4.into();
    v["distill"]["render_views"] = 2.into();
    v["distill"]["particles"] = particles.into();
    v["distill"]["residual_adapter"]["hidden"] = serde_json::json!([16]);
    let p = dir.join("small.json");
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn make_teacher_echoes_geometry_and_is_stable() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for d in [&a, &b] {
        let o = sdl(&["make-teacher", "--out", s(d), "--modes", "4", "--height", "16", "--width", "16"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("4 components, dim 768"));
    }
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("teacher.json")).unwrap()).unwrap();
    assert_eq!(t["components"].as_array().unwrap().len(), 4);
    assert_eq!(t["dim"], 768);
    assert_eq!(fs::read(a.join("teacher.json")).unwrap(), fs::read(b.join("teacher.json")).unwrap());
    assert_eq!(fs::read(a.join("prompt.json")).unwrap(), fs::read(b.join("prompt.json")).unwrap());
}

#[test]
fn invalid_teachers_exit_2_without_a_directory() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path().join("t");
    let o = sdl(&["make-teacher", "--out", s(&d), "--spread", "0", "--classify"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("spread"));
    let o = sdl(&["make-teacher", "--out", s(&d), "--border", "8"]);
    assert_eq!(code(&o), 2);
    let o = sdl(&["make-teacher", "--out", s(&d), "--modes", "0"]);
    assert_eq!(code(&o), 2);
    assert!(!d.exists());
    // a point mass without the classification flag is fine
    assert_eq!(code(&sdl(&["make-teacher", "--out", s(&d), "--spread", "0"])), 0);
}

#[test]
fn invert_writes_one_token_file_and_reference_per_particle() {
    let root = tempfile::tempdir().unwrap();
    let d = teacher_dir(root.path(), "r");
    let o = sdl(&["invert", "--out", s(&d), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tokens = d.join("tokens");
    let first: Vec<Vec<u8>> = (0..6).map(|i| fs::read(tokens.join(format!("tokens_particle_{i}.json"))).unwrap()).collect();
    for i in 0..6 {
        let (shape, _) = decode_ppm(&fs::read(tokens.join(format!("reference_{i}.ppm"))).unwrap()).unwrap();
        assert_eq!((shape.height, shape.width), (16, 16));
    }
    assert!(!tokens.join("tokens_particle_6.json").exists());
    let o = sdl(&["invert", "--out", s(&d), "--seed", "3"]);
    assert_eq!(code(&o), 0);
    for (i, f) in first.iter().enumerate() {
        assert_eq!(&fs::read(tokens.join(format!("tokens_particle_{i}.json"))).unwrap(), f);
    }
}

#[test]
fn invert_needs_its_inputs() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path().join("empty");
    let o = sdl(&["invert", "--out", s(&d)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("teacher.json"));
    assert!(!d.exists());
}

#[test]
fn diverging_inversion_exits_3_and_marks_the_directory() {
    let root = tempfile::tempdir().unwrap();
    let d = teacher_dir(root.path(), "r");
    let cfg = root.path().join("inv.json");
    fs::write(&cfg, r#"{"inversion": {"init_scale": 1e308}}"#).unwrap();
    let o = sdl(&["invert", "--out", s(&d), "--config", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(d.join(".failed").exists());
    assert!(!d.join(".lock").exists());
    assert!(d.join("teacher.json").exists());
}

#[test]
fn distill_rejects_bad_inputs_before_compute() {
    let root = tempfile::tempdir().unwrap();
    let d = teacher_dir(root.path(), "r");
    let cfg = small_config(&d, 6);
    let run = root.path().join("run");

    let o = sdl(&["distill", "--out", s(&run), "--config", s(&cfg), "--method", "tsd"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tokens_particle_0.json") && stderr(&o).contains("tokens_particle_5.json"));

    let o = sdl(&["distill", "--out", s(&run), "--config", s(&cfg), "--method", "dsd"]);
    assert_eq!(code(&o), 2);

    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"teacher": "teacher.json", "prompt": "prompt.json", "distill": {"iters": 5, "particels": 2}}"#).unwrap();
    let o = sdl(&["distill", "--out", s(&run), "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("particels"));
    assert!(!run.exists());
}

#[test]
fn distill_run_directory_is_complete_and_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let d = teacher_dir(root.path(), "r");
    let cfg = small_config(&d, 3);
    let o = sdl(&["invert", "--out", s(&d), "--particles", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for out in [&a, &b] {
        fs::create_dir_all(out).unwrap();
        fs::create_dir_all(out.join("tokens")).unwrap();
        for i in 0..3 {
            let name = format!("tokens_particle_{i}.json");
            fs::copy(d.join("tokens").join(&name), out.join("tokens").join(&name)).unwrap();
        }
        let o = sdl(&["distill", "--out", s(out), "--config", s(&cfg), "--method", "tsd"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let m = verify_manifest(&a).unwrap();
    assert_eq!(m.iterations, 40);
    for f in ["metrics.csv", "checkpoints/iter_40/particle_0.bin", "checkpoints/iter_40/model.bin", "renders/iter_40/particle_2_view_1.ppm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(!a.join(".lock").exists() && !a.join(".failed").exists());
}

#[test]
fn evaluate_is_pure_and_lays_out_a_contact_sheet() {
    let root = tempfile::tempdir().unwrap();
    let d = teacher_dir(root.path(), "r");
    let cfg = small_config(&d, 3);
    let o = sdl(&["distill", "--out", s(&d), "--config", s(&cfg), "--method", "sds", "--skip-renders"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = d.join("checkpoints/iter_40");
    let report = d.join("reports/evaluate_iter_40_log_posterior_v120.json");
    let o = sdl(&["evaluate", "--checkpoint", s(&ckpt), "--preset", "paper"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = fs::read(&report).unwrap();
    let o = sdl(&["evaluate", "--checkpoint", s(&ckpt), "--preset", "paper"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&report).unwrap(), first);
    let r: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(r["views"], 120);

    let sheet = d.join("reports/evaluate_iter_40_log_posterior_v120_contact_sheet.ppm");
    let (shape, _) = decode_ppm(&fs::read(sheet).unwrap()).unwrap();
    assert_eq!(shape.height, 3 * 16);
    assert_eq!(shape.width, 8 * 16);

    let metrics = fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.contains(",120,")).count(), 2);
}

#[test]
fn evaluate_needs_two_particles_for_cosine() {
    let root = tempfile::tempdir().unwrap();
    let d = teacher_dir(root.path(), "r");
    let cfg = small_config(&d, 1);
    let o = sdl(&["distill", "--out", s(&d), "--config", s(&cfg), "--method", "sds", "--skip-renders"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = sdl(&["evaluate", "--out", s(&d)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("2 particles"));
    assert_eq!(code(&sdl(&["evaluate", "--out", s(&d), "--no-cosine"])), 0);
}

#[test]
fn probes_report_and_repeat() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for out in [&a, &b] {
        for kind in ["lemma1", "lemma2"] {
            let o = sdl(&["probe", kind, "--out", s(out), "--seed", "4", "--segments", "200"]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
    }
    for f in ["probe_lemma1.json", "probe_lemma1.csv", "probe_lemma2.json", "probe_lemma2.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let l1: serde_json::Value = serde_json::from_slice(&fs::read(a.join("probe_lemma1.json")).unwrap()).unwrap();
    let single = l1.as_array().unwrap().iter().find(|r| r["name"] == "lemma1_single_mode").unwrap();
    assert_eq!(single["violation_fraction"], 0.0);
    let l2 = fs::read_to_string(a.join("probe_lemma2.csv")).unwrap();
    assert!(l2.contains("lemma2_density_head") && l2.contains("lemma2_color_head"));
    assert_eq!(code(&sdl(&["probe", "lemma3", "--out", s(&a)])), 2);
}

#[test]
fn a_held_lock_refuses_the_directory() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path().join("busy");
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join(".lock"), "1\n").unwrap();
    let o = sdl(&["probe", "lemma2", "--out", s(&d), "--segments", "10"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("in use"));
    assert!(!d.join("probe_lemma2.json").exists());
}

#[test]
fn thread_count_does_not_change_results() {
    let root = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "4"] {
        let out = root.path().join(format!("t{threads}"));
        let o = Command::new(env!("CARGO_BIN_EXE_sdl-lab"))
            .args(["bench", "--out", s(&out), "--iters", "20", "--seeds", "2"])
            .env("SDL_LAB_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outs.push(out);
    }
    for f in ["sds_seed2/metrics.csv", "vsd_seed2/metrics.csv", "tsd_seed2/metrics.csv", "tsd_seed2/checkpoints/iter_20/particle_5.bin"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    let bad = sdl(&["bench", "--out", s(&root.path().join("x")), "--threads", "0"]);
    assert_eq!(code(&bad), 2);
}
