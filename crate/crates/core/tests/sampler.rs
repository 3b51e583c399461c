mod common;

use std::collections::HashSet;

use common::rng;
use negev::evidence::{
    build_pseudo_mask, resample_schedule, sample_evidence, EvidenceSet, PixelLabel, SamplingMode,
};
use negev::networks::Cam;
use rand::Rng;

const DRAWS: usize = 100_000;

fn cam(values: Vec<f64>, height: usize, width: usize) -> Cam {
    Cam {
        values,
        height,
        width,
        class: 1,
    }
}

/// Pearson statistic of observed counts against expected probabilities.
fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * total as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper 0.001 quantiles of the chi-square distribution.
fn critical_001(df: usize) -> f64 {
    match df {
        1 => 10.828,
        2 => 13.816,
        3 => 16.266,
        7 => 24.322,
        15 => 37.697,
        63 => 103.442,
        _ => panic!("no table entry for df {df}"),
    }
}

fn positive_counts(c: &Cam, draws: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut pos = vec![0; c.len()];
    let mut neg = vec![0; c.len()];
    let mut r = rng(seed);
    for _ in 0..draws {
        let ev = sample_evidence(c, 1, SamplingMode::Random, &mut r).unwrap();
        pos[ev.positive[0]] += 1;
        neg[ev.negative[0]] += 1;
    }
    (pos, neg)
}

#[test]
fn two_pixel_frequency_follows_weights() {
    let c = cam(vec![0.9, 0.1], 1, 2);
    let (pos, neg) = positive_counts(&c, DRAWS, 1);
    let freq = pos[0] as f64 / DRAWS as f64;
    assert!((freq - 0.9).abs() <= 0.01, "{freq}");
    // the background pixel is whatever the foreground draw left over
    assert_eq!(neg[1], pos[0]);
}

#[test]
fn weighted_frequencies_pass_chi_square() {
    for (i, w) in [
        vec![0.7, 0.2, 0.1, 0.0],
        vec![0.05, 0.15, 0.3, 0.5, 0.9, 1.0, 0.25, 0.6],
    ]
    .into_iter()
    .enumerate()
    {
        let len = w.len();
        let support: Vec<usize> = (0..len).filter(|&k| w[k] > 0.0).collect();
        let total: f64 = w.iter().sum();
        let c = cam(w.clone(), 1, len);
        let (pos, _) = positive_counts(&c, DRAWS, 10 + i as u64);
        for k in 0..len {
            if w[k] == 0.0 {
                assert_eq!(pos[k], 0, "zero-weight pixel {k} drawn");
            }
        }
        let counts: Vec<usize> = support.iter().map(|&k| pos[k]).collect();
        let probs: Vec<f64> = support.iter().map(|&k| w[k] / total).collect();
        let stat = chi_square(&counts, &probs);
        assert!(
            stat < critical_001(support.len() - 1),
            "weights {w:?}: chi2 {stat}"
        );
    }
}

#[test]
fn constant_cam_is_uniform() {
    for (h, w) in [(4, 4), (8, 8)] {
        let len = h * w;
        let c = cam(vec![0.5; len], h, w);
        let (pos, neg) = positive_counts(&c, DRAWS, len as u64);
        let probs = vec![1.0 / len as f64; len];
        for counts in [&pos, &neg] {
            let stat = chi_square(counts, &probs);
            assert!(stat < critical_001(len - 1), "{h}x{w}: chi2 {stat}");
        }
        let p = 1.0 / len as f64;
        let sigma = (DRAWS as f64 * p * (1.0 - p)).sqrt();
        for &k in &pos {
            assert!((k as f64 - DRAWS as f64 * p).abs() < 4.0 * sigma);
        }
    }
}

#[test]
fn degenerate_cams_fall_back_to_uniform() {
    for fill in [0.0, 1.0] {
        let c = cam(vec![fill; 16], 4, 4);
        let (pos, neg) = positive_counts(&c, DRAWS, 5);
        let probs = vec![1.0 / 16.0; 16];
        let degenerate = if fill == 0.0 { &pos } else { &neg };
        let stat = chi_square(degenerate, &probs);
        assert!(stat < critical_001(15), "fill {fill}: chi2 {stat}");
    }
}

#[test]
fn regions_never_overlap() {
    let mut r = rng(77);
    for _ in 0..DRAWS {
        let h = r.random_range(1..=6);
        let w = r.random_range(2..=6);
        let len = h * w;
        let values: Vec<f64> = (0..len)
            .map(|_| match r.random_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => r.random_range(0.0..=1.0),
            })
            .collect();
        let n = r.random_range(1..=len / 2);
        let mode = if r.random_bool(0.8) {
            SamplingMode::Random
        } else {
            SamplingMode::Static
        };
        let ev = sample_evidence(&cam(values, h, w), n, mode, &mut r).unwrap();
        assert_eq!(ev.positive.len(), n);
        assert_eq!(ev.negative.len(), n);
        let pos: HashSet<_> = ev.positive.iter().collect();
        assert_eq!(pos.len(), n);
        assert_eq!(ev.negative.iter().collect::<HashSet<_>>().len(), n);
        assert!(ev.negative.iter().all(|i| !pos.contains(i) && *i < len));
        assert!(ev.positive.iter().all(|&i| i < len));
    }
}

#[test]
fn static_mode_picks_extremes() {
    let c = cam(vec![1.0, 0.8, 0.2, 0.0], 2, 2);
    for seed in 0..20 {
        let ev = sample_evidence(&c, 1, SamplingMode::Static, &mut rng(seed)).unwrap();
        assert_eq!(ev.positive, vec![0]);
        assert_eq!(ev.negative, vec![3]);
    }
}

fn textured_cam(size: usize) -> Cam {
    let raw: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            (y * 0.21).sin() * (x * 0.17).cos() + 0.3 * (x * y * 0.01).sin()
        })
        .collect();
    let c = Cam::normalize(raw, size, size, 1).unwrap();
    assert!(!c.is_degenerate());
    c
}

#[test]
fn consecutive_epochs_draw_different_pixels() {
    let c = textured_cam(64);
    let mut differ = 0;
    for seed in 0..1000 {
        let a = sample_evidence(
            &c,
            1,
            SamplingMode::Random,
            &mut resample_schedule(seed, 3, 4),
        )
        .unwrap();
        let b = sample_evidence(
            &c,
            1,
            SamplingMode::Random,
            &mut resample_schedule(seed, 3, 5),
        )
        .unwrap();
        if a.positive != b.positive {
            differ += 1;
        }
    }
    assert!(differ as f64 / 1000.0 > 0.9, "{differ}/1000");
}

#[test]
fn schedule_is_a_pure_function_of_its_key() {
    let c = textured_cam(16);
    let draw = |s, i, e| {
        sample_evidence(&c, 3, SamplingMode::Random, &mut resample_schedule(s, i, e)).unwrap()
    };
    assert_eq!(draw(1, 2, 3), draw(1, 2, 3));
    assert_ne!(draw(1, 2, 3).positive, draw(2, 2, 3).positive);
    let mut a = resample_schedule(9, 9, 9);
    let mut b = resample_schedule(9, 9, 9);
    let xs: Vec<u64> = (0..50).map(|_| a.random()).collect();
    let ys: Vec<u64> = (0..50).map(|_| b.random()).collect();
    assert_eq!(xs, ys);
}

#[test]
fn e_epochs_touch_at_most_two_e_pixels() {
    let c = textured_cam(16);
    for epochs in [1u64, 5, 30] {
        let mut touched = HashSet::new();
        for e in 0..epochs {
            let ev = sample_evidence(
                &c,
                1,
                SamplingMode::Random,
                &mut resample_schedule(4, 11, e),
            )
            .unwrap();
            touched.extend(ev.positive);
            touched.extend(ev.negative);
        }
        assert!(touched.len() as u64 <= 2 * epochs);
    }
}

#[test]
fn pseudo_mask_counts_and_round_trip() {
    let ev = EvidenceSet {
        positive: vec![5],
        negative: vec![9],
        n: 1,
        mode: SamplingMode::Random,
    };
    let mask = build_pseudo_mask(&ev, 4, 4).unwrap();
    assert_eq!(mask.num_labeled(), 2);
    assert_eq!(
        mask.labels
            .iter()
            .filter(|&&l| l == PixelLabel::Unknown)
            .count(),
        14
    );
    assert_eq!(mask.labels[5], PixelLabel::Foreground);
    assert_eq!(mask.labels[9], PixelLabel::Background);

    let empty = EvidenceSet {
        positive: vec![],
        negative: vec![],
        n: 0,
        mode: SamplingMode::Random,
    };
    assert_eq!(build_pseudo_mask(&empty, 3, 3).unwrap().num_labeled(), 0);

    let c = textured_cam(16);
    let mut r = rng(3);
    for _ in 0..200 {
        let ev = sample_evidence(&c, r.random_range(1..=20), SamplingMode::Random, &mut r).unwrap();
        let (fg, bg) = build_pseudo_mask(&ev, 16, 16).unwrap().index_sets();
        let mut pos = ev.positive.clone();
        let mut neg = ev.negative.clone();
        pos.sort_unstable();
        neg.sort_unstable();
        assert_eq!((fg, bg), (pos, neg));
    }
}

#[test]
fn out_of_range_index_is_rejected() {
    let ev = EvidenceSet {
        positive: vec![16],
        negative: vec![0],
        n: 1,
        mode: SamplingMode::Static,
    };
    assert!(matches!(
        build_pseudo_mask(&ev, 4, 4),
        Err(negev::Error::Dimension { .. })
    ));
}

#[test]
fn n_bounds_are_checked() {
    let c = cam(vec![0.5; 6], 2, 3);
    assert!(sample_evidence(&c, 3, SamplingMode::Random, &mut rng(0)).is_ok());
    assert!(matches!(
        sample_evidence(&c, 4, SamplingMode::Random, &mut rng(0)),
        Err(negev::Error::Config(_))
    ));
    assert!(sample_evidence(&c, 0, SamplingMode::Random, &mut rng(0)).is_err());
    assert!(sample_evidence(&cam(vec![], 0, 0), 1, SamplingMode::Random, &mut rng(0)).is_err());
}
