use proptest::prelude::*;
use sdl_lab::metrics::{cosine_from_features, evaluate, iq_from_table, iv_from_table, Extractor};
use sdl_lab::numerics::RngStream;
use sdl_lab::prompts::{equidistant_base, TokenMatrix};
use sdl_lab::scenes::{CameraConfig, ImageScene, ImageShape, RenderConfig};
use sdl_lab::teacher::bench_teacher;

fn random_table(rng: &mut RngStream, rows: usize, c: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..c).map(|_| rng.uniform() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn h(p: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in p {
        if x > 0.0 {
            s -= x * x.ln();
        }
    }
    s
}

#[test]
fn iq_and_iv_match_brute_force() {
    let mut rng = RngStream::new(200, 0);
    for _ in 0..50 {
        let (k, v, c) = (2 + rng.index(5), 1 + rng.index(6), 2 + rng.index(4));
        let table = random_table(&mut rng, k * v, c);
        let mut iq = 0.0;
        for i in 0..k {
            for j in 0..v {
                iq += h(&table[i * v + j]);
            }
        }
        iq /= (k * v) as f64;
        let mut mean = vec![0.0; c];
        for i in 0..k {
            for j in 0..v {
                for q in 0..c {
                    mean[q] += table[i * v + j][q] / (k * v) as f64;
                }
            }
        }
        assert!((iq_from_table(&table).unwrap() - iq).abs() < 1e-12);
        assert!((iv_from_table(&table).unwrap() - h(&mean)).abs() < 1e-12);
    }
}

#[test]
fn cosine_matches_pair_enumeration() {
    let mut rng = RngStream::new(201, 0);
    for _ in 0..50 {
        let (k, v, d) = (2 + rng.index(4), 1 + rng.index(5), 1 + rng.index(6));
        let feats: Vec<Vec<Vec<f64>>> = (0..v).map(|_| (0..k).map(|_| rng.normal_vec(d)).collect()).collect();
        let mut total = 0.0;
        for view in &feats {
            let mut s = 0.0;
            let mut pairs = 0;
            for a in 0..k {
                for b in 0..k {
                    if a < b {
                        let dot: f64 = view[a].iter().zip(&view[b]).map(|(x, y)| x * y).sum();
                        let na = view[a].iter().map(|x| x * x).sum::<f64>().sqrt();
                        let nb = view[b].iter().map(|x| x * x).sum::<f64>().sqrt();
                        s += dot / (na * nb);
                        pairs += 1;
                    }
                }
            }
            total += s / pairs as f64;
        }
        let want = total / v as f64;
        assert!((cosine_from_features(&feats).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn cosine_needs_two_nonzero_features() {
    assert!(cosine_from_features(&[vec![vec![1.0, 0.0]]]).is_err());
    assert!(cosine_from_features(&[vec![vec![1.0, 0.0], vec![0.0, 0.0]]]).is_err());
    assert_eq!(cosine_from_features(&[vec![vec![1.0, 0.0], vec![0.0, 2.0]]]).unwrap(), 0.0);
}

fn eval_setup() -> (sdl_lab::teacher::GmTeacher, TokenMatrix, RenderConfig, Vec<sdl_lab::scenes::Camera>) {
    let t = bench_teacher();
    let base = equidistant_base(&t, 4, 0.5, &mut RngStream::new(0, 77)).unwrap();
    let shape = t.image.unwrap();
    let cams = CameraConfig::default().eval_views(6);
    (t, base, RenderConfig::for_image(shape), cams)
}

#[test]
fn identical_particles_have_unit_similarity_and_no_diversity() {
    let (t, base, render, cams) = eval_setup();
    let p = ImageScene::random(render.image, 1.0, &mut RngStream::new(202, 0));
    let ps = vec![p.clone(), p.clone(), p];
    for ex in [Extractor::LogPosterior, Extractor::CenteredPixels] {
        let r = evaluate(&ps, &cams, &render, &t, &base, ex, true).unwrap();
        assert!((r.cosine_sim.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.views, 6);
        assert_eq!(r.extractor_id, ex.id());
    }
}

#[test]
fn evaluation_is_pure_and_order_invariant() {
    let (t, base, render, cams) = eval_setup();
    let mut rng = RngStream::new(203, 0);
    let ps: Vec<ImageScene> = (0..4).map(|_| ImageScene::random(render.image, 2.0, &mut rng)).collect();
    let a = evaluate(&ps, &cams, &render, &t, &base, Extractor::LogPosterior, true).unwrap();
    let b = evaluate(&ps, &cams, &render, &t, &base, Extractor::LogPosterior, true).unwrap();
    assert_eq!(a, b);
    let rev: Vec<ImageScene> = ps.iter().rev().cloned().collect();
    let cams_rev: Vec<_> = cams.iter().rev().cloned().collect();
    let c = evaluate(&rev, &cams_rev, &render, &t, &base, Extractor::LogPosterior, true).unwrap();
    assert!((a.iq - c.iq).abs() < 1e-12);
    assert!((a.iv - c.iv).abs() < 1e-12);
    assert!((a.cosine_sim.unwrap() - c.cosine_sim.unwrap()).abs() < 1e-12);
}

#[test]
fn evaluation_rejects_bad_inputs() {
    let (t, base, render, cams) = eval_setup();
    let one = vec![ImageScene::zeros(render.image)];
    assert!(evaluate(&one, &cams, &render, &t, &base, Extractor::LogPosterior, true).unwrap_err().is_validation());
    assert!(evaluate(&one, &cams, &render, &t, &base, Extractor::LogPosterior, false).is_ok());
    let small = RenderConfig::for_image(ImageShape {
        height: 2,
        width: 2,
        channels: 3,
    });
    let two = vec![ImageScene::zeros(small.image), ImageScene::zeros(small.image)];
    assert!(evaluate(&two, &cams, &small, &t, &base, Extractor::LogPosterior, true).is_err());
}

fn table_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..12).prop_flat_map(|(c, rows)| {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), rows).prop_map(|t| {
            t.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum::<f64>() + 1e-9;
                    r.iter().map(|v| (v + 1e-9 / r.len() as f64) / s).collect()
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn iq_and_iv_lie_in_range(table in table_strategy()) {
        let c = table[0].len() as f64;
        let iq = iq_from_table(&table).unwrap();
        let iv = iv_from_table(&table).unwrap();
        prop_assert!(iq >= -1e-12 && iq <= c.ln() + 1e-12);
        prop_assert!(iv >= -1e-12 && iv <= c.ln() + 1e-12);
        // concavity of entropy
        prop_assert!(iv >= iq - 1e-12);
    }

    #[test]
    fn row_order_does_not_matter(table in table_strategy()) {
        let mut rev = table.clone();
        rev.reverse();
        prop_assert!((iq_from_table(&table).unwrap() - iq_from_table(&rev).unwrap()).abs() < 1e-12);
        prop_assert!((iv_from_table(&table).unwrap() - iv_from_table(&rev).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cosine_ignores_positive_rescaling(
        feats in prop::collection::vec(prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 3), 1..4),
        scale in 0.1f64..10.0,
    ) {
        prop_assume!(feats.iter().flatten().all(|f| f.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let scaled: Vec<Vec<Vec<f64>>> = feats
            .iter()
            .map(|v| v.iter().map(|f| f.iter().map(|x| x * scale).collect()).collect())
            .collect();
        let a = cosine_from_features(&feats).unwrap();
        let b = cosine_from_features(&scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
    }
}
