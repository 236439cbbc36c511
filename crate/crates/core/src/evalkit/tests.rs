use super::*;
use crate::synthdata::io::decode_pnm;
use crate::synthdata::{generate_corpus, GenConfig, NoiseSpec, SceneSpec};
use proptest::prelude::*;

fn mask(h: usize, w: usize, mut on: impl FnMut(usize, usize) -> bool) -> Mask {
    let mut m = Mask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            m.data[y * w + x] = on(y, x) as u8;
        }
    }
    m
}

#[test]
fn f_measure_examples() {
    let y = mask(8, 8, |y, x| (2..6).contains(&y) && (2..6).contains(&x));
    assert_eq!(f_measure(&y.to_f64(), &y, BETA2), 1.0);
    assert_eq!(f_measure(&[0.0; 64], &y, BETA2), 0.0);
    let half = mask(8, 8, |y, x| (2..4).contains(&y) && (2..6).contains(&x));
    assert!((f_measure(&half.to_f64(), &y, BETA2) - 0.8125).abs() < 1e-12);
    let empty = Mask::zeros(8, 8);
    assert_eq!(f_measure(&[0.0; 64], &empty, BETA2), 1.0);
    assert_eq!(f_measure(&y.to_f64(), &empty, BETA2), 0.0);
}

#[test]
fn adaptive_threshold_is_twice_the_mean_capped_at_one() {
    assert_eq!(adaptive_threshold(&[0.1, 0.3]), 0.4);
    assert_eq!(adaptive_threshold(&[0.9, 0.7]), 1.0);
}

#[test]
fn mae_examples() {
    let y = mask(4, 4, |y, _| y < 2);
    assert_eq!(mae(&y.to_f64(), &y), 0.0);
    let zero = Mask::zeros(4, 4);
    assert_eq!(mae(&[1.0; 16], &zero), 1.0);
    assert_eq!(mae(&[0.25; 16], &zero), 0.25);
}

#[test]
fn report_means_and_csv() {
    let y = mask(4, 4, |y, _| y < 2);
    let a = y.to_f64();
    let b = [0.0; 16];
    let r = MetricReport::compute([("a", &a[..], &y), ("b", &b[..], &y)]).unwrap();
    assert_eq!(r.len(), 2);
    assert_eq!(r.mean_f, 0.5);
    assert_eq!(r.mean_mae, 0.25);
    let mut out = Vec::new();
    r.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("id,threshold,f_measure,mae\n"));
    assert!(text.ends_with("mean,0.5,0.5,0.25\n"), "{text}");
    assert!(MetricReport::compute(std::iter::empty()).is_err());
}

#[test]
fn rendered_maps_quantize_half_up() {
    let bytes = encode_map(&[1.0; 6], 2, 3).unwrap();
    assert!(decode_pnm(&bytes).unwrap().3.iter().all(|&v| v == 255));
    let bytes = encode_map(&[0.5; 6], 2, 3).unwrap();
    assert!(decode_pnm(&bytes).unwrap().3.iter().all(|&v| v == 128));
    let s: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.pgm");
    render_map(&s, 8, 8, &p).unwrap();
    let (_, _, _, px) = decode_pnm(&fs::read(&p).unwrap()).unwrap();
    for (v, b) in s.iter().zip(px) {
        assert!((v - b as f64 / 255.0).abs() <= 0.5 / 255.0 + 1e-12);
    }
    assert!(encode_map(&[0.0; 5], 2, 3).is_err());
}

fn corpus(noise: NoiseSpec, count: usize) -> Vec<FocalStackSample> {
    generate_corpus(
        &GenConfig {
            count,
            scene: SceneSpec {
                width: 32,
                height: 32,
                ..SceneSpec::default()
            },
            noise,
            ..GenConfig::default()
        },
        5,
    )
    .unwrap()
}

#[test]
fn zero_noise_leaves_the_noisy_population_empty() {
    let samples = corpus(NoiseSpec::clean(), 3);
    let mut st = ForgettingState::new(samples.iter().map(|s| s.id.as_str()), 32, 32);
    for s in &samples {
        st.update(&s.id, 0, vec![1; 1024], vec![0; 1024]).unwrap();
    }
    let truth: Vec<_> = samples.iter().map(NoiseTruth::from_sample).collect();
    let r = forgetting_analysis(&st, &truth).unwrap();
    assert_eq!(r.noisy.pixels, 0);
    assert_eq!(r.noisy.fraction, None);
    assert_eq!(r.clean.fraction, Some(0.0));
    assert_eq!(r.separation(), None);
    // one stream learned at epoch 0, the other never
    assert_eq!(r.first_learn, vec![(0, 3072), (0, 3072)]);
    assert_eq!(r.clean.mean_first_learn, Some(0.5));
}

#[test]
fn analysis_needs_logged_epochs() {
    let samples = corpus(NoiseSpec::default(), 2);
    let st = ForgettingState::new(samples.iter().map(|s| s.id.as_str()), 32, 32);
    let truth: Vec<_> = samples.iter().map(NoiseTruth::from_sample).collect();
    assert!(forgetting_analysis(&st, &truth).is_err());
}

#[test]
fn frequent_forgetting_is_attributed_to_the_right_population() {
    let samples = corpus(NoiseSpec::default(), 2);
    let truth: Vec<_> = samples.iter().map(NoiseTruth::from_sample).collect();
    let mut st = ForgettingState::new(samples.iter().map(|s| s.id.as_str()), 32, 32);
    // every noisy pixel oscillates, every clean pixel stays learned
    for e in 0..10u32 {
        for t in &truth {
            let tf: Vec<u8> = t.noise.data.iter().map(|&n| if n == 1 { (e % 2 == 0) as u8 } else { 1 }).collect();
            st.update(&t.id, e, tf.clone(), tf).unwrap();
        }
    }
    let r = forgetting_analysis(&st, &truth).unwrap();
    assert_eq!(r.epochs, 10);
    assert_eq!(r.noisy.fraction, Some(1.0));
    assert_eq!(r.clean.fraction, Some(0.0));
    assert_eq!(r.noisy.mean_events, Some(5.0));
    assert_eq!(r.separation(), Some(f64::INFINITY));
    assert_eq!(r.noisy.pixels + r.clean.pixels, 2 * 2 * 1024);
    assert_eq!(r.events[5].0, r.noisy.pixels);
    assert!(r.noisy_in_box.pixels <= r.noisy.pixels && r.noisy_in_box.pixels > 0);
    let mut csv = Vec::new();
    r.write_summary_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
}

#[test]
fn boundary_noise_sits_at_object_scale() {
    let samples = corpus(
        NoiseSpec {
            rate: 0.0,
            radius: 2,
            ..NoiseSpec::default()
        },
        6,
    );
    let r = cross_scene_correlation(&samples).unwrap();
    assert_eq!(r.points.len() + r.omitted, samples.len());
    for p in &r.points {
        assert!(p.distance > 0.0 && p.distance < 0.6, "{p:?}");
        assert!((0.0..=1.0).contains(&p.intensity));
    }
}

#[test]
fn uniform_flips_match_the_expected_uniform_distance() {
    let samples = generate_corpus(
        &GenConfig {
            count: 3,
            scene: SceneSpec::default(),
            noise: NoiseSpec {
                rate: 0.3,
                radius: 0,
                ..NoiseSpec::default()
            },
            ..GenConfig::default()
        },
        8,
    )
    .unwrap();
    let r = cross_scene_correlation(&samples).unwrap();
    for (p, s) in r.points.iter().zip(&samples) {
        // expectation over a uniformly chosen pixel, by direct enumeration
        let m = s.clean_mask();
        let pts: Vec<(f64, f64)> = (0..m.len())
            .filter(|&i| m.data[i] == 1)
            .map(|i| ((i / m.width) as f64 + 0.5, (i % m.width) as f64 + 0.5))
            .collect();
        let cy = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let cx = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let diag = (2.0 * 64.0f64 * 64.0).sqrt();
        let expect = (0..m.len())
            .map(|i| (((i / 64) as f64 + 0.5 - cy).powi(2) + ((i % 64) as f64 + 0.5 - cx).powi(2)).sqrt())
            .sum::<f64>()
            / m.len() as f64
            / diag;
        assert!((p.distance - expect).abs() < 0.01, "{} vs {expect}", p.distance);
    }
}

#[test]
fn heuristic_corpora_are_refused() {
    let samples = corpus(
        NoiseSpec {
            mode: NoiseMode::Heuristic,
            ..NoiseSpec::default()
        },
        2,
    );
    assert!(cross_scene_correlation(&samples).is_err());
}

#[test]
fn noisy_labels_score_below_clean_ones() {
    let noisy = label_quality(&corpus(NoiseSpec::default(), 5)).unwrap();
    let clean = label_quality(&corpus(NoiseSpec::clean(), 5)).unwrap();
    assert_eq!(clean.mean_f, 1.0);
    assert!(noisy.mean_f < 0.95 && noisy.mean_mae > 0.0);
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_range(seed in 0u64..500) {
        use rand::Rng;
        let mut rng = crate::synthdata::seeded_rng(seed);
        let s: Vec<f64> = (0..36).map(|_| rng.random_range(0.0..=1.0)).collect();
        let y = mask(6, 6, |_, _| rng.random_bool(0.3));
        let f = f_measure(&s, &y, BETA2);
        let m = mae(&s, &y);
        prop_assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&m));
        let inv: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        prop_assert!((mae(&inv, &y.complement()) - m).abs() < 1e-12);
    }
}
