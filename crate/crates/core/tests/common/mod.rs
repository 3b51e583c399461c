//! Oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use negev::data::{generate_dataset, SplitCounts};
use negev::evidence::{build_pseudo_mask, sample_evidence, SamplingMode};
use negev::loss::{total_loss, LossConfig};
use negev::networks::{build_classifier, class_cross_entropy, ArchConfig, Decoder, SoftmaxMaps};
use negev::numerics::{gradcheck, relative_error, Tape, Tensor, Var};
use negev::pipeline::{RunConfig, Splits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loss value plus, when gradients are wanted, the tape state to read them from.
type Probe = (
    f64,
    Option<(Tape, negev::numerics::BoundParams, Var, Vec<f64>)>,
);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Direct seven-loop convolution with zero padding.
pub fn conv2d_naive(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let xv = x.values();
    let kv = k.values();
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = b.values()[o];
                for c in 0..c_in {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (xo * stride + j) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += xv[(c * h + iy as usize) * w + ix as usize]
                                * kv[((o * c_in + c) * kh + i) * kw + j];
                        }
                    }
                }
                out[(o * oh + y) * ow + xo] = acc;
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out).unwrap()
}

/// Area under the pooled precision-recall curve by recounting every pixel at
/// each of the 1001 thresholds.
pub fn pxap_bruteforce(pairs: &[(Vec<f64>, Vec<bool>)]) -> f64 {
    let total_pos = pairs.iter().flat_map(|(_, m)| m).filter(|&&m| m).count() as f64;
    let mut prec = Vec::with_capacity(1001);
    let mut rec = Vec::with_capacity(1001);
    for i in 0..=1000 {
        let t = i as f64 / 1000.0;
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, m) in pairs {
            for (v, &gt) in s.iter().zip(m) {
                if *v >= t {
                    if gt {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
        }
        prec.push(if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) });
        rec.push(tp / total_pos);
    }
    let mut ap = 0.0;
    for i in 0..=1000 {
        let next = if i == 1000 { 0.0 } else { rec[i + 1] };
        ap += (rec[i] - next) * prec[i];
    }
    100.0 * ap
}

/// Ten 8x8 maps with at least one foreground pixel. Odd seeds snap scores
/// to the threshold grid so that ties with thresholds are exercised.
pub fn random_eval_set(seed: u64) -> Vec<(Vec<f64>, Vec<bool>)> {
    let mut r = rng(seed);
    let snapped = seed % 2 == 1;
    let mut set: Vec<(Vec<f64>, Vec<bool>)> = (0..10)
        .map(|_| {
            let fg = r.random_range(0.0..0.6);
            let scores = (0..64)
                .map(|_| {
                    let s: f64 = r.random_range(0.0..=1.0);
                    if snapped {
                        (s * 1000.0).round() / 1000.0
                    } else {
                        s
                    }
                })
                .collect();
            let mask = (0..64).map(|_| r.random_bool(fg)).collect();
            (scores, mask)
        })
        .collect();
    set[0].1[0] = true;
    set
}

/// Probe step of the finite-difference checks.
pub const EPS: f64 = 1e-5;
/// Inputs closer than this to a relu or maxpool kink are re-drawn.
pub const KINK: f64 = 1e-4;

/// Compares tape gradients of `sum(r * build(inputs))` with central
/// differences, for every input. Returns `None` when the draw sits too close
/// to a non-differentiable point.
pub fn check_projection<F>(inputs: &[Tensor], build: F, rng: &mut ChaCha8Rng) -> Option<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    if tape.kink_margin() < KINK {
        return None;
    }
    let r: Vec<f64> = (0..tape.value(out).len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut grads = tape.backward(out, &r).unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .take(vars[i])
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let numeric = gradcheck::finite_diff_grad(
            |probe| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| t.constant(if j == i { probe.clone() } else { x.clone() }))
                    .collect();
                let o = build(&mut t, &vs);
                t.value(o).values().iter().zip(&r).map(|(a, b)| a * b).sum()
            },
            input,
            EPS,
        )
        .unwrap();
        worst = worst.max(relative_error(&analytic, numeric.values()));
    }
    Some(worst)
}

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        image_size: 8,
        in_channels: 3,
        widths: vec![3, 4],
        decoder_widths: vec![2, 3],
        num_classes: 2,
    }
}

/// Gradient of the gated NEGEV objective through the whole decoder with
/// respect to every decoder parameter.
pub fn check_decoder_loss(seed: u64, fully_negative: bool, cfg: &LossConfig) -> Option<f64> {
    let arch = tiny_arch();
    let mut classifier = build_classifier(&arch, seed).unwrap();
    classifier.freeze();
    let decoder = Decoder::new(&arch, seed + 1000).unwrap();
    let mut r = rng(seed);
    let size = arch.image_size;
    let image = Tensor::new(
        vec![3, size, size],
        (0..3 * size * size)
            .map(|_| r.random_range(0.0..1.0))
            .collect(),
    )
    .unwrap();
    let features = classifier.encode(&image).unwrap();
    let cam = classifier.cam_from_features(&features, 1).unwrap();
    let ev = sample_evidence(&cam, 3, SamplingMode::Random, &mut r).unwrap();
    let mask = build_pseudo_mask(&ev, size, size).unwrap();

    let objective = |params: &negev::numerics::ParamSet| -> Probe {
        let d = Decoder::from_params(&arch, params.clone()).unwrap();
        let mut tape = Tape::new();
        let (bound, out) = d.forward_features(&mut tape, &features).unwrap();
        let maps = SoftmaxMaps::new(tape.value(out).clone()).unwrap();
        let (v, g) = total_loss(&maps, &mask, fully_negative, cfg).unwrap();
        (v.total, Some((tape, bound, out, g)))
    };
    let (_, built) = objective(decoder.params());
    let (tape, bound, out, g) = built.unwrap();
    if tape.kink_margin() < KINK {
        return None;
    }
    let grads = tape.backward(out, &g).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..decoder.params().len() {
        let analytic = grads.get(bound.var(i)).unwrap().to_vec();
        let point = decoder.params().entry(i).tensor.clone();
        let numeric = gradcheck::finite_diff_grad(
            |probe| {
                let mut p = decoder.params().clone();
                p.entry_mut(i).tensor = probe.clone();
                objective(&p).0
            },
            &point,
            EPS,
        )
        .unwrap();
        worst = worst.max(relative_error(&analytic, numeric.values()));
    }
    Some(worst)
}

/// Cross-entropy of the classifier scores with respect to every classifier
/// parameter.
pub fn check_classifier_loss(seed: u64) -> Option<f64> {
    let arch = tiny_arch();
    let classifier = build_classifier(&arch, seed).unwrap();
    let mut r = rng(seed);
    let size = arch.image_size;
    let image = Tensor::new(
        vec![3, size, size],
        (0..3 * size * size)
            .map(|_| r.random_range(0.0..1.0))
            .collect(),
    )
    .unwrap();
    let label = (seed % 2) as usize;
    let loss_at = |params: &negev::numerics::ParamSet| {
        let c = negev::networks::Classifier::from_params(&arch, params.clone()).unwrap();
        class_cross_entropy(c.classify(&image).unwrap().values(), label).0
    };
    let mut tape = Tape::new();
    let bound = classifier.params().bind(&mut tape);
    let x = tape.constant(image.clone());
    let scores = classifier.scores_on_tape(&mut tape, &bound, x).unwrap();
    if tape.kink_margin() < KINK {
        return None;
    }
    let (_, g) = class_cross_entropy(tape.value(scores).values(), label);
    let grads = tape.backward(scores, &g).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..classifier.params().len() {
        let analytic = grads.get(bound.var(i)).unwrap().to_vec();
        let point = classifier.params().entry(i).tensor.clone();
        let numeric = gradcheck::finite_diff_grad(
            |probe| {
                let mut p = classifier.params().clone();
                p.entry_mut(i).tensor = probe.clone();
                loss_at(&p)
            },
            &point,
            EPS,
        )
        .unwrap();
        worst = worst.max(relative_error(&analytic, numeric.values()));
    }
    Some(worst)
}

pub struct GradCase {
    pub name: &'static str,
    pub worst: f64,
    pub seeds: usize,
    pub skipped: usize,
}

fn run_case<F>(name: &'static str, seeds: usize, mut check: F) -> GradCase
where
    F: FnMut(u64) -> Option<f64>,
{
    let (mut worst, mut done, mut skipped) = (0.0f64, 0, 0);
    let mut seed = 0;
    while done < seeds {
        match check(seed) {
            Some(e) => {
                worst = worst.max(e);
                done += 1;
            }
            None => skipped += 1,
        }
        seed += 1;
        assert!(skipped < 100, "{name}: every draw lands on a kink");
    }
    GradCase {
        name,
        worst,
        seeds: done,
        skipped,
    }
}

/// Every primitive and both composed objectives over `seeds` accepted draws.
pub fn gradient_suite(seeds: usize) -> Vec<GradCase> {
    let mut cases = Vec::new();
    cases.push(run_case("conv2d stride 1 pad 1", seeds, |s| {
        let mut r = rng(s);
        let x = rand_tensor(&[2, 5, 5], &mut r);
        let k = rand_tensor(&[3, 2, 3, 3], &mut r);
        let b = rand_tensor(&[3], &mut r);
        check_projection(
            &[x, k, b],
            |t, v| t.conv2d(v[0], v[1], v[2], 1, 1).unwrap(),
            &mut r,
        )
    }));
    cases.push(run_case("conv2d stride 2 pad 0", seeds, |s| {
        let mut r = rng(s + 100);
        let x = rand_tensor(&[2, 7, 6], &mut r);
        let k = rand_tensor(&[2, 2, 3, 2], &mut r);
        let b = rand_tensor(&[2], &mut r);
        check_projection(
            &[x, k, b],
            |t, v| t.conv2d(v[0], v[1], v[2], 2, 0).unwrap(),
            &mut r,
        )
    }));
    cases.push(run_case("relu", seeds, |s| {
        let mut r = rng(s + 200);
        let x = rand_tensor(&[2, 4, 4], &mut r);
        check_projection(&[x], |t, v| t.relu(v[0]), &mut r)
    }));
    cases.push(run_case("maxpool2", seeds, |s| {
        let mut r = rng(s + 300);
        let x = rand_tensor(&[2, 4, 6], &mut r);
        check_projection(&[x], |t, v| t.maxpool2(v[0]).unwrap(), &mut r)
    }));
    cases.push(run_case("upsample_nearest2", seeds, |s| {
        let mut r = rng(s + 400);
        let x = rand_tensor(&[2, 3, 2], &mut r);
        check_projection(&[x], |t, v| t.upsample_nearest2(v[0]).unwrap(), &mut r)
    }));
    cases.push(run_case("dense", seeds, |s| {
        let mut r = rng(s + 500);
        let x = rand_tensor(&[5], &mut r);
        let w = rand_tensor(&[3, 5], &mut r);
        let b = rand_tensor(&[3], &mut r);
        check_projection(
            &[x, w, b],
            |t, v| t.dense(v[0], v[1], v[2]).unwrap(),
            &mut r,
        )
    }));
    cases.push(run_case("global_avg_pool", seeds, |s| {
        let mut r = rng(s + 600);
        let x = rand_tensor(&[3, 4, 5], &mut r);
        check_projection(&[x], |t, v| t.global_avg_pool(v[0]).unwrap(), &mut r)
    }));
    cases.push(run_case("pixel_softmax", seeds, |s| {
        let mut r = rng(s + 700);
        let x = rand_tensor(&[2, 3, 4], &mut r);
        check_projection(&[x], |t, v| t.pixel_softmax(v[0]).unwrap(), &mut r)
    }));
    cases.push(run_case("concat_channels", seeds, |s| {
        let mut r = rng(s + 800);
        let a = rand_tensor(&[2, 3, 3], &mut r);
        let b = rand_tensor(&[1, 3, 3], &mut r);
        check_projection(
            &[a, b],
            |t, v| t.concat_channels(v[0], v[1]).unwrap(),
            &mut r,
        )
    }));
    let cfg = LossConfig::default();
    cases.push(run_case("decoder + evidence loss", seeds, |s| {
        check_decoder_loss(s, false, &cfg)
    }));
    cases.push(run_case("decoder + fully negative loss", seeds, |s| {
        check_decoder_loss(s, true, &cfg)
    }));
    cases.push(run_case(
        "classifier + cross-entropy",
        seeds,
        check_classifier_loss,
    ));
    cases
}

/// Small dataset and network: the whole protocol in seconds.
pub fn tiny_config(out: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        out_dir: out.to_path_buf(),
        ..Default::default()
    };
    cfg.data.seed = Some(7);
    cfg.data.counts = SplitCounts {
        train: 12,
        valid: 6,
        test: 6,
        pixel_labeled_per_class: 1,
    };
    cfg.data.generator.image_size = 16;
    cfg.data.generator.blob_radius = [2.0, 5.0];
    cfg.arch = ArchConfig {
        image_size: 16,
        in_channels: 3,
        widths: vec![4, 6],
        decoder_widths: vec![3, 4],
        num_classes: 2,
    };
    cfg.classifier.epochs = 2;
    cfg.classifier.batch_size = 4;
    cfg.decoder.epochs = 3;
    cfg.decoder.batch_size = 4;
    cfg
}

pub fn tiny_splits(cfg: &RunConfig) -> Splits {
    let index = generate_dataset(
        &cfg.data_dir(),
        cfg.data_seed(),
        &cfg.data.counts,
        cfg.data.profile,
        &cfg.data.generator,
    )
    .unwrap();
    Splits::load(&index).unwrap()
}
