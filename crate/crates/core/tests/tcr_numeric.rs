mod common;

use common::one_conv::OneConv;
use framemix::tcr::{self, FeatureMap};
use framemix::{DetectorConfig, DetectorState, FrameTriple, Pixels, Trainable, VideoFrame};
use proptest::prelude::*;
use rand::Rng;

fn random_pixels<R: Rng>(rng: &mut R, h: usize, w: usize) -> Pixels {
    Pixels::from_fn(h, w, 3, |_, _, _| rng.random::<f64>())
}

fn frame(pixels: Pixels, i: usize) -> VideoFrame {
    VideoFrame { pixels, frame_index: i, source_video: "v".into() }
}

fn random_triple<R: Rng>(rng: &mut R, h: usize, w: usize) -> FrameTriple {
    FrameTriple::new(
        frame(random_pixels(rng, h, w), 3),
        frame(random_pixels(rng, h, w), 4),
        frame(random_pixels(rng, h, w), 5),
        1,
    )
    .unwrap()
}

/// Central differences of `f` over every parameter.
fn numeric_grad<D: Trainable>(det: &mut D, f: impl Fn(&D) -> f64, h: f64) -> Vec<f64> {
    (0..det.params().len())
        .map(|i| {
            let orig = det.params()[i];
            det.params_mut()[i] = orig + h;
            let up = f(det);
            det.params_mut()[i] = orig - h;
            let down = f(det);
            det.params_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[test]
fn one_conv_gradient_matches_finite_differences() {
    let mut rng = framemix::seed::stream(21, &[]);
    for trial in 0..3 {
        let mut enc = OneConv { cin: 3, cout: 4, w: (0..4 * 3 * 9).map(|_| rng.random_range(-0.5..0.5)).collect() };
        let triple = random_triple(&mut rng, 6, 7);
        let mut analytic = vec![0.0; enc.w.len()];
        let loss = tcr::triple_loss_and_grad(&enc, &triple, 1e-8, 1.0, &mut analytic).unwrap();
        assert!((0.0..=2.0).contains(&loss));
        let numeric = numeric_grad(&mut enc, |d| tcr::triple_loss(d, &triple, 1e-8).unwrap(), 1e-5);
        let err = max_rel_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "trial {trial}: relative error {err}");
    }
}

#[test]
fn reference_encoder_gradient_matches_finite_differences() {
    let cfg = DetectorConfig { feature_channels: 4, feature_stride: 2, ..DetectorConfig::default() };
    let mut det = DetectorState::new(cfg, 5).unwrap();
    let mut rng = framemix::seed::stream(22, &[]);
    let triple = random_triple(&mut rng, 8, 8);
    let mut analytic = vec![0.0; det.params().len()];
    tcr::triple_loss_and_grad(&det, &triple, 1e-8, 1.0, &mut analytic).unwrap();
    let numeric = numeric_grad(&mut det, |d| tcr::triple_loss(d, &triple, 1e-8).unwrap(), 1e-6);
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = max_rel_error(&analytic, &numeric, 1e-3 * scale);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn static_triple_has_zero_loss() {
    let det = DetectorState::new(DetectorConfig::default(), 1).unwrap();
    let mut rng = framemix::seed::stream(23, &[]);
    let p = random_pixels(&mut rng, 64, 64);
    let triple = FrameTriple::new(frame(p.clone(), 0), frame(p.clone(), 1), frame(p, 2), 1).unwrap();
    let l = tcr::triple_loss(&det, &triple, 1e-8).unwrap();
    assert!(l.abs() <= 1e-6, "{l}");
    assert_eq!(tcr::combined_loss(0.7, l, 0.01).unwrap(), 0.7 + 0.01 * l);
}

#[test]
fn swapping_neighbours_keeps_encoder_loss() {
    let det = DetectorState::new(DetectorConfig::default(), 2).unwrap();
    let mut rng = framemix::seed::stream(24, &[]);
    let t = random_triple(&mut rng, 32, 32);
    let swapped = FrameTriple::new(
        frame(t.next.pixels.clone(), 3),
        frame(t.mid.pixels.clone(), 4),
        frame(t.prev.pixels.clone(), 5),
        1,
    )
    .unwrap();
    let a = tcr::triple_loss(&det, &t, 1e-8).unwrap();
    let b = tcr::triple_loss(&det, &swapped, 1e-8).unwrap();
    assert!((a - b).abs() <= 1e-12);
}

fn feature_strategy() -> impl Strategy<Value = (FeatureMap, FeatureMap, FeatureMap)> {
    (1usize..5, 1usize..4, 1usize..4).prop_flat_map(|(c, h, w)| {
        let n = c * h * w;
        let v = move || prop::collection::vec(-10.0f64..10.0, n).prop_map(move |d| FeatureMap::new(c, h, w, d).unwrap());
        (v(), v(), v())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_in_range_and_symmetric((p, m, n) in feature_strategy()) {
        let a = tcr::tcr_loss(&m, &tcr::estimate_midframe(&p, &n).unwrap(), 1e-8).unwrap();
        let b = tcr::tcr_loss(&m, &tcr::estimate_midframe(&n, &p).unwrap(), 1e-8).unwrap();
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&a));
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn cosine_is_scale_invariant((p, m, n) in feature_strategy(), k in 0.01f64..100.0) {
        let hat = tcr::estimate_midframe(&p, &n).unwrap();
        let (c, h, w) = m.shape();
        let scaled = FeatureMap::new(c, h, w, m.values().iter().map(|v| v * k).collect()).unwrap();
        // Locations with near-zero norms sit on the epsilon floor.
        let norm_ok = (0..h * w).all(|loc| {
            let nm: f64 = (0..c).map(|ch| m.values()[ch * h * w + loc].powi(2)).sum::<f64>().sqrt();
            let nh: f64 = (0..c).map(|ch| hat.values()[ch * h * w + loc].powi(2)).sum::<f64>().sqrt();
            nm * nh * k.min(1.0) > 1e-4
        });
        prop_assume!(norm_ok);
        let a = tcr::tcr_loss(&m, &hat, 1e-8).unwrap();
        let b = tcr::tcr_loss(&scaled, &hat, 1e-8).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn midframe_matches_scalar_loop((p, _m, n) in feature_strategy()) {
        let hat = tcr::estimate_midframe(&p, &n).unwrap();
        for i in 0..p.values().len() {
            let expected = (p.values()[i] + n.values()[i]) / 2.0;
            prop_assert!((hat.values()[i] - expected).abs() <= 1e-7);
        }
    }
}
