//! Classifier training, decoder training (weakly and fully supervised),
//! model selection and evaluation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::evidence::{
    build_pseudo_mask, resample_schedule, sample_evidence, EvidenceSet, PseudoMask,
};
use crate::loss::{self, Branch, LossValue};
use crate::metrics::{self, EvalPair, PxapReport};
use crate::networks::{
    build_classifier, class_cross_entropy, Cam, Classifier, Decoder, EncoderFeatures, SoftmaxMaps,
};
use crate::numerics::{sgd_step, ParamSet, Tape};

use super::config::RunConfig;

fn order_rng(seed: u64, tag: &[u8; 8], epoch: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[24..].copy_from_slice(tag);
    ChaCha8Rng::from_seed(key)
}

fn shuffled(len: usize, seed: u64, tag: &[u8; 8], epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut order_rng(seed, tag, epoch));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    /// Parameters of the retained epoch.
    pub classifier: Classifier,
    pub epochs: Vec<ClassifierEpoch>,
    pub best_epoch: usize,
}

impl ClassifierRun {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,valid_accuracy\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.train_loss, e.train_accuracy, e.valid_accuracy
            )
            .unwrap();
        }
        out
    }
}

pub fn accuracy_on(classifier: &Classifier, samples: &[ImageSample]) -> Result<f64> {
    let preds = samples
        .iter()
        .map(|s| classifier.predict(&s.image))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    metrics::classification_accuracy(&preds, &labels)
}

/// SGD on softmax cross-entropy of image labels. The epoch with the best
/// validation accuracy is retained; ties go to the later epoch.
pub fn train_classifier(
    cfg: &RunConfig,
    train: &[ImageSample],
    valid: &[ImageSample],
) -> Result<ClassifierRun> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Precondition(
            "classifier training needs train and valid samples".into(),
        ));
    }
    let hypers = &cfg.classifier;
    let mut classifier = build_classifier(&cfg.arch, cfg.seed)?;
    let mut best = (f64::NEG_INFINITY, 0, classifier.clone());
    let mut epochs = Vec::with_capacity(hypers.epochs);
    for epoch in 1..=hypers.epochs {
        let order = shuffled(train.len(), cfg.seed, b"cls-shuf", epoch as u64);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for batch in order.chunks(hypers.batch_size) {
            for &i in batch {
                let sample = &train[i];
                let mut tape = Tape::new();
                let bound = classifier.params().bind(&mut tape);
                let x = tape.constant(sample.image.clone());
                let scores = classifier.scores_on_tape(&mut tape, &bound, x)?;
                let (loss, grad) = class_cross_entropy(tape.value(scores).values(), sample.label);
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "classifier loss diverged at epoch {epoch} on image {}",
                        sample.image_id
                    )));
                }
                loss_sum += loss;
                if crate::networks::argmax(tape.value(scores).values()) == sample.label {
                    hits += 1;
                }
                let grads = tape.backward(scores, &grad)?;
                classifier.params_mut().accumulate(&bound, &grads)?;
            }
            classifier
                .params_mut()
                .scale_grads(1.0 / batch.len() as f64);
            sgd_step(classifier.params_mut(), hypers.lr, hypers.weight_decay)?;
        }
        let valid_accuracy = accuracy_on(&classifier, valid)?;
        epochs.push(ClassifierEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: 100.0 * hits as f64 / train.len() as f64,
            valid_accuracy,
        });
        if valid_accuracy >= best.0 {
            best = (valid_accuracy, epoch, classifier.clone());
        }
    }
    Ok(ClassifierRun {
        classifier: best.2,
        epochs,
        best_epoch: best.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub image_id: u64,
    pub loss: LossValue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_pxap: f64,
}

/// Decoder parameters after an epoch, with their validation score. Epoch 0
/// is the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochCheckpoint {
    pub epoch: usize,
    pub valid_pxap: f64,
    pub params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct DecoderRun {
    /// Decoder restored from the selected checkpoint.
    pub decoder: Decoder,
    pub selected_epoch: usize,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<EpochCheckpoint>,
}

impl DecoderRun {
    /// Per-step loss breakdown followed by one `epoch_end` row per epoch.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "epoch,step,image_id,branch,total,evidence_term,negative_term,valid_pxap\n",
        );
        let mut steps = self.steps.iter().peekable();
        for e in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.epoch <= e.epoch) {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},",
                    s.epoch,
                    s.step,
                    s.image_id,
                    s.loss.branch,
                    s.loss.total,
                    s.loss.evidence_term,
                    s.loss.negative_term
                )
                .unwrap();
            }
            writeln!(
                out,
                "{},,,epoch_end,{},,,{}",
                e.epoch, e.mean_loss, e.valid_pxap
            )
            .unwrap();
        }
        out
    }
}

/// Best validation PxAP; ties go to the earliest epoch, independent of the
/// order of `checkpoints`.
pub fn select_model(checkpoints: &[EpochCheckpoint]) -> Result<&EpochCheckpoint> {
    checkpoints
        .iter()
        .reduce(|best, c| {
            if c.valid_pxap > best.valid_pxap
                || (c.valid_pxap == best.valid_pxap && c.epoch < best.epoch)
            {
                c
            } else {
                best
            }
        })
        .ok_or_else(|| Error::Precondition("model selection needs at least one checkpoint".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Supervision {
    Evidence,
    FullMask,
}

struct Prepared<'a> {
    sample: &'a ImageSample,
    features: EncoderFeatures,
    cam: Cam,
}

fn prepare<'a>(classifier: &Classifier, samples: &'a [ImageSample]) -> Result<Vec<Prepared<'a>>> {
    samples
        .iter()
        .map(|sample| {
            let features = classifier.encode(&sample.image)?;
            let cam = classifier.cam_from_features(&features, sample.label)?;
            Ok(Prepared {
                sample,
                features,
                cam,
            })
        })
        .collect()
}

fn foreground_pairs(decoder: &Decoder, prepared: &[Prepared]) -> Result<Vec<EvalPair>> {
    prepared
        .iter()
        .map(|p| {
            let maps = decoder.predict(&p.features)?;
            EvalPair::new(maps.foreground().to_vec(), p.sample.mask()?.to_vec())
        })
        .collect()
}

/// The evidence the decoder is trained on for one image at one epoch.
pub fn evidence_for(
    cfg: &RunConfig,
    image_id: u64,
    epoch: usize,
    cam: &Cam,
) -> Result<EvidenceSet> {
    let mut rng = resample_schedule(cfg.seed, image_id, epoch as u64);
    sample_evidence(cam, cfg.loss.n, cfg.loss.mode, &mut rng)
}

fn fit_decoder(
    cfg: &RunConfig,
    classifier: &Classifier,
    train: &[ImageSample],
    valid_labeled: &[ImageSample],
    supervision: Supervision,
) -> Result<DecoderRun> {
    cfg.validate()?;
    if !classifier.is_frozen() {
        return Err(Error::State(
            "decoder training requires a frozen classifier".into(),
        ));
    }
    if train.is_empty() || valid_labeled.is_empty() {
        return Err(Error::Precondition(
            "decoder training needs train and pixel-labelled validation samples".into(),
        ));
    }
    let hypers = &cfg.decoder;
    let train_prep = prepare(classifier, train)?;
    let valid_prep = prepare(classifier, valid_labeled)?;
    let mut decoder = Decoder::new(&cfg.arch, cfg.seed)?;

    let initial = metrics::pxap(&foreground_pairs(&decoder, &valid_prep)?)?.pxap;
    let mut checkpoints = vec![EpochCheckpoint {
        epoch: 0,
        valid_pxap: initial,
        params: decoder.params().clone(),
    }];
    let mut epochs = Vec::with_capacity(hypers.epochs);
    let mut steps = Vec::new();
    let mut step = 0;
    for epoch in 1..=hypers.epochs {
        let order = shuffled(train_prep.len(), cfg.seed, b"dec-shuf", epoch as u64);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hypers.batch_size) {
            for &i in batch {
                let prep = &train_prep[i];
                let mut tape = Tape::new();
                let (bound, out) = decoder.forward_features(&mut tape, &prep.features)?;
                let maps = SoftmaxMaps::new(tape.value(out).clone())?;
                let (value, grad) = match supervision {
                    Supervision::Evidence => step_objective(cfg, prep, epoch, &maps)?,
                    Supervision::FullMask => {
                        let obj =
                            loss::supervised_bce(&maps, prep.sample.mask()?, cfg.loss.prob_clamp)?;
                        let value = LossValue {
                            total: obj.value,
                            evidence_term: obj.value,
                            negative_term: 0.0,
                            branch: Branch::Evidence,
                        };
                        (value, obj.grad)
                    }
                };
                if !value.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "decoder loss diverged at epoch {epoch} on image {}",
                        prep.sample.image_id
                    )));
                }
                loss_sum += value.total;
                steps.push(StepRecord {
                    epoch,
                    step,
                    image_id: prep.sample.image_id,
                    loss: value,
                });
                step += 1;
                let grads = tape.backward(out, &grad)?;
                decoder.params_mut().accumulate(&bound, &grads)?;
            }
            decoder.params_mut().scale_grads(1.0 / batch.len() as f64);
            sgd_step(decoder.params_mut(), hypers.lr, hypers.weight_decay)?;
        }
        let valid_pxap = metrics::pxap(&foreground_pairs(&decoder, &valid_prep)?)?.pxap;
        epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / train_prep.len() as f64,
            valid_pxap,
        });
        checkpoints.push(EpochCheckpoint {
            epoch,
            valid_pxap,
            params: decoder.params().clone(),
        });
    }
    let selected = select_model(&checkpoints)?;
    let selected_epoch = selected.epoch;
    let decoder = Decoder::from_params(&cfg.arch, selected.params.clone())?;
    Ok(DecoderRun {
        decoder,
        selected_epoch,
        steps,
        epochs,
        checkpoints,
    })
}

fn step_objective(
    cfg: &RunConfig,
    prep: &Prepared,
    epoch: usize,
    maps: &SoftmaxMaps,
) -> Result<(LossValue, Vec<f64>)> {
    let mask = if prep.sample.fully_negative {
        PseudoMask {
            labels: vec![crate::evidence::PixelLabel::Unknown; maps.num_pixels()],
            height: maps.height(),
            width: maps.width(),
        }
    } else {
        let ev = evidence_for(cfg, prep.sample.image_id, epoch, &prep.cam)?;
        build_pseudo_mask(&ev, maps.height(), maps.width())?
    };
    loss::total_loss(maps, &mask, prep.sample.fully_negative, &cfg.loss)
}

/// Trains the decoder on CAM evidence and the all-background term, selecting
/// the epoch by PxAP on `valid_labeled`. Training masks are never read.
pub fn train_decoder(
    cfg: &RunConfig,
    classifier: &Classifier,
    train: &[ImageSample],
    valid_labeled: &[ImageSample],
) -> Result<DecoderRun> {
    fit_decoder(cfg, classifier, train, valid_labeled, Supervision::Evidence)
}

/// Same loop against the true training masks: the fully supervised
/// reference. `train` must have been loaded with full supervision.
pub fn train_decoder_supervised(
    cfg: &RunConfig,
    classifier: &Classifier,
    train: &[ImageSample],
    valid_labeled: &[ImageSample],
) -> Result<DecoderRun> {
    fit_decoder(cfg, classifier, train, valid_labeled, Supervision::FullMask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Cam,
    Decoder,
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cam" => Ok(Source::Cam),
            "decoder" => Ok(Source::Decoder),
            other => Err(Error::Config(format!("unknown source {other:?}"))),
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Cam => "cam",
            Source::Decoder => "decoder",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub source: Source,
    pub report: PxapReport,
    /// Pooled PxAP, or the per-image mean when requested.
    pub pxap: f64,
    pub accuracy: f64,
}

/// Localization maps for `samples`: the normalized CAM of the true class, or
/// the decoder foreground map.
pub fn score_maps(
    classifier: &Classifier,
    decoder: Option<&Decoder>,
    samples: &[ImageSample],
    source: Source,
) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| {
            let features = classifier.encode(&s.image)?;
            match source {
                Source::Cam => Ok(classifier.cam_from_features(&features, s.label)?.values),
                Source::Decoder => {
                    let d = decoder.ok_or_else(|| {
                        Error::Precondition("decoder source needs a decoder".into())
                    })?;
                    Ok(d.predict(&features)?.foreground().to_vec())
                }
            }
        })
        .collect()
}

pub fn evaluate(
    classifier: &Classifier,
    decoder: Option<&Decoder>,
    samples: &[ImageSample],
    source: Source,
    per_image_mean: bool,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Precondition(
            "evaluation needs at least one test sample".into(),
        ));
    }
    let maps = score_maps(classifier, decoder, samples, source)?;
    let pairs = maps
        .into_iter()
        .zip(samples)
        .map(|(m, s)| EvalPair::new(m, s.mask()?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let report = metrics::pxap(&pairs)?;
    let pxap = if per_image_mean {
        metrics::pxap_per_image_mean(&pairs)?
    } else {
        report.pxap
    };
    Ok(Evaluation {
        source,
        report,
        pxap,
        accuracy: accuracy_on(classifier, samples)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(epoch: usize, valid_pxap: f64) -> EpochCheckpoint {
        EpochCheckpoint {
            epoch,
            valid_pxap,
            params: ParamSet::new(),
        }
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_model(&[ckpt(1, 50.0)]).unwrap().epoch, 1);
        let inc: Vec<_> = (1..=5).map(|e| ckpt(e, e as f64)).collect();
        assert_eq!(select_model(&inc).unwrap().epoch, 5);
        let three = [ckpt(1, 70.1), ckpt(2, 82.0), ckpt(3, 81.3)];
        assert_eq!(select_model(&three).unwrap().epoch, 2);
        assert!(matches!(select_model(&[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn selection_ties_and_order() {
        let a = [ckpt(3, 80.0), ckpt(1, 80.0), ckpt(2, 79.0)];
        assert_eq!(select_model(&a).unwrap().epoch, 1);
        let mut b = a.clone();
        b.reverse();
        assert_eq!(select_model(&b).unwrap().epoch, 1);
    }
}
