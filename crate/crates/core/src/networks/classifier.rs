use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, BoundParams, ParamSet, Tape, Tensor, Var};

use super::{init_rng, ArchConfig, Cam};

const CLASSIFIER_STREAM: u64 = 1;

/// CNN encoder with a global-average-pool + dense head. The head weights
/// double as the CAM weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: ArchConfig,
    params: ParamSet,
}

/// Per-stage activations of the encoder. `skips[s]` is the output of stage
/// `s` before pooling; `last` is the pooled output of the final stage.
#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    pub skips: Vec<Tensor>,
    pub last: Tensor,
}

pub(super) fn conv_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.weight"), format!("{prefix}.bias"))
}

pub(super) fn insert_conv<R: rand::Rng>(
    params: &mut ParamSet,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    let (w, b) = conv_names(prefix);
    params.insert(
        w,
        xavier_uniform(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k, rng),
    )?;
    params.insert(b, Tensor::zeros(&[c_out]))?;
    Ok(())
}

pub(super) fn conv_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    bound: &BoundParams,
    prefix: &str,
    input: Var,
    pad: usize,
) -> Result<Var> {
    let (w, b) = conv_names(prefix);
    let wi = params.index_of(&w).expect("conv weight registered");
    let bi = params.index_of(&b).expect("conv bias registered");
    tape.conv2d(input, bound.var(wi), bound.var(bi), 1, pad)
}

/// Seeded construction; the same `(arch, seed)` always yields bit-identical
/// parameters.
pub fn build_classifier(arch: &ArchConfig, seed: u64) -> Result<Classifier> {
    arch.validate()?;
    let mut rng = init_rng(seed, CLASSIFIER_STREAM);
    let mut params = ParamSet::new();
    let mut c_prev = arch.in_channels;
    for (s, &w) in arch.widths.iter().enumerate() {
        insert_conv(
            &mut params,
            &format!("enc.{s}.conv1"),
            c_prev,
            w,
            3,
            &mut rng,
        )?;
        insert_conv(&mut params, &format!("enc.{s}.conv2"), w, w, 3, &mut rng)?;
        c_prev = w;
    }
    let k = arch.num_classes;
    params.insert(
        "head.weight",
        xavier_uniform(&[k, c_prev], c_prev, k, &mut rng),
    )?;
    params.insert("head.bias", Tensor::zeros(&[k]))?;
    Ok(Classifier {
        arch: arch.clone(),
        params,
    })
}

impl Classifier {
    /// Wraps loaded parameters, checking them against `arch`.
    pub fn from_params(arch: &ArchConfig, params: ParamSet) -> Result<Self> {
        let reference = build_classifier(arch, 0)?;
        let compatible = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape());
        if !compatible {
            return Err(Error::Config(
                "checkpoint does not match the classifier architecture".into(),
            ));
        }
        Ok(Classifier {
            arch: arch.clone(),
            params,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// Flags every parameter frozen. Idempotent.
    pub fn freeze(&mut self) {
        self.params.freeze_all();
    }

    pub fn is_frozen(&self) -> bool {
        self.params.all_frozen()
    }

    pub fn check_image(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.chw()?;
        if c != self.arch.in_channels {
            return Err(Error::dim(
                "channels",
                format!("expected {} channels, got {c}", self.arch.in_channels),
            ));
        }
        if h != self.arch.image_size {
            return Err(Error::dim(
                "height",
                format!("expected {}, got {h}", self.arch.image_size),
            ));
        }
        if w != self.arch.image_size {
            return Err(Error::dim(
                "width",
                format!("expected {}, got {w}", self.arch.image_size),
            ));
        }
        Ok(())
    }

    /// Records the encoder on `tape`, returning the skip activations and the
    /// final pooled features.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
    ) -> Result<(Vec<Var>, Var)> {
        self.check_image(tape.value(x))?;
        let mut skips = Vec::with_capacity(self.arch.stages());
        let mut h = x;
        for s in 0..self.arch.stages() {
            h = conv_on_tape(tape, &self.params, bound, &format!("enc.{s}.conv1"), h, 1)?;
            h = tape.relu(h);
            h = conv_on_tape(tape, &self.params, bound, &format!("enc.{s}.conv2"), h, 1)?;
            h = tape.relu(h);
            skips.push(h);
            h = tape.maxpool2(h)?;
        }
        Ok((skips, h))
    }

    /// Records encoder and head; returns the score node.
    pub fn scores_on_tape(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let (_, feats) = self.encode_on_tape(tape, bound, x)?;
        let pooled = tape.global_avg_pool(feats)?;
        let w = bound.var(
            self.params
                .index_of("head.weight")
                .expect("head registered"),
        );
        let b = bound.var(self.params.index_of("head.bias").expect("head registered"));
        tape.dense(pooled, w, b)
    }

    pub fn encode(&self, x: &Tensor) -> Result<EncoderFeatures> {
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let (skips, last) = self.encode_on_tape(&mut tape, &bound, xv)?;
        Ok(EncoderFeatures {
            skips: skips.into_iter().map(|v| tape.value(v).clone()).collect(),
            last: tape.value(last).clone(),
        })
    }

    /// Class scores `dense(global_avg_pool(features))`.
    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        let features = self.encode(x)?;
        self.scores_from_features(&features)
    }

    pub fn scores_from_features(&self, features: &EncoderFeatures) -> Result<Tensor> {
        let pooled = crate::numerics::global_avg_pool(&features.last)?;
        crate::numerics::dense(
            &pooled,
            &self
                .params
                .get("head.weight")
                .expect("head registered")
                .tensor,
            &self
                .params
                .get("head.bias")
                .expect("head registered")
                .tensor,
        )
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(self.classify(x)?.values()))
    }

    pub fn compute_cam(&self, x: &Tensor, class: usize) -> Result<Cam> {
        let features = self.encode(x)?;
        self.cam_from_features(&features, class)
    }

    pub fn cam_from_features(&self, features: &EncoderFeatures, class: usize) -> Result<Cam> {
        if class >= self.arch.num_classes {
            return Err(Error::Config(format!(
                "class {class} out of range for {} classes",
                self.arch.num_classes
            )));
        }
        let head = &self
            .params
            .get("head.weight")
            .expect("head registered")
            .tensor;
        let c = head.shape()[1];
        let row = &head.values()[class * c..(class + 1) * c];
        super::cam_from_features(
            &features.last,
            row,
            self.arch.image_size,
            self.arch.image_size,
            class,
        )
    }

    fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        if self.is_frozen() {
            self.params.bind(tape)
        } else {
            let mut frozen = self.params.clone();
            frozen.freeze_all();
            frozen.bind(tape)
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of class scores against `label`. Returns the loss
/// and its gradient with respect to the scores.
pub fn class_cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - scores[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / total - if i == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}
