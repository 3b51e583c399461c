use crate::error::{Error, Result};
use crate::numerics::{BoundParams, ParamSet, Tape, Tensor, Var};

use super::classifier::{conv_on_tape, insert_conv};
use super::{init_rng, ArchConfig, Classifier, EncoderFeatures};

const DECODER_STREAM: u64 = 2;

/// Two-channel per-pixel softmax output `[S0, S1]` of the decoder, stored as
/// a `[2, H, W]` tensor. Channel 0 is background, channel 1 foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxMaps(Tensor);

impl SoftmaxMaps {
    pub fn new(maps: Tensor) -> Result<Self> {
        let (c, _, _) = maps.chw()?;
        if c != 2 {
            return Err(Error::dim(
                "channels",
                format!("softmax maps need 2 channels, got {c}"),
            ));
        }
        Ok(SoftmaxMaps(maps))
    }

    /// Builds maps from a foreground probability per pixel.
    pub fn from_foreground(fg: &[f64], height: usize, width: usize) -> Result<Self> {
        let mut values: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
        values.extend_from_slice(fg);
        Self::new(Tensor::new(vec![2, height, width], values)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn num_pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn background(&self) -> &[f64] {
        &self.0.values()[..self.num_pixels()]
    }

    pub fn foreground(&self) -> &[f64] {
        &self.0.values()[self.num_pixels()..]
    }
}

/// Upsampling path with skip connections from every encoder stage and a 1x1
/// two-channel output head.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    arch: ArchConfig,
    params: ParamSet,
}

impl Decoder {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = init_rng(seed, DECODER_STREAM);
        let mut params = ParamSet::new();
        let stages = arch.stages();
        for s in (0..stages).rev() {
            let below = if s + 1 == stages {
                arch.widths[s]
            } else {
                arch.decoder_widths[s + 1]
            };
            insert_conv(
                &mut params,
                &format!("dec.{s}"),
                below + arch.widths[s],
                arch.decoder_widths[s],
                3,
                &mut rng,
            )?;
        }
        insert_conv(
            &mut params,
            "dec.head",
            arch.decoder_widths[0],
            2,
            1,
            &mut rng,
        )?;
        Ok(Decoder {
            arch: arch.clone(),
            params,
        })
    }

    pub fn from_params(arch: &ArchConfig, params: ParamSet) -> Result<Self> {
        let reference = Decoder::new(arch, 0)?;
        let compatible = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape());
        if !compatible {
            return Err(Error::Config(
                "checkpoint does not match the decoder architecture".into(),
            ));
        }
        Ok(Decoder {
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

    /// Records the decoder on `tape` given the encoder activations (already
    /// on the tape) and returns the softmax node.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        skips: &[Var],
        last: Var,
    ) -> Result<Var> {
        if skips.len() != self.arch.stages() {
            return Err(Error::dim(
                "skips",
                format!(
                    "expected {} skip maps, got {}",
                    self.arch.stages(),
                    skips.len()
                ),
            ));
        }
        let mut h = last;
        for s in (0..self.arch.stages()).rev() {
            h = tape.upsample_nearest2(h)?;
            h = tape.concat_channels(h, skips[s])?;
            h = conv_on_tape(tape, &self.params, bound, &format!("dec.{s}"), h, 1)?;
            h = tape.relu(h);
        }
        let logits = conv_on_tape(tape, &self.params, bound, "dec.head", h, 0)?;
        tape.pixel_softmax(logits)
    }

    /// Records the decoder on top of precomputed encoder features, which enter
    /// the tape as constants.
    pub fn forward_features(
        &self,
        tape: &mut Tape,
        features: &EncoderFeatures,
    ) -> Result<(BoundParams, Var)> {
        let bound = self.params.bind(tape);
        let skips: Vec<Var> = features
            .skips
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let last = tape.constant(features.last.clone());
        let out = self.forward_on_tape(tape, &bound, &skips, last)?;
        Ok((bound, out))
    }

    pub fn predict(&self, features: &EncoderFeatures) -> Result<SoftmaxMaps> {
        let mut tape = Tape::new();
        let (_, out) = self.forward_features(&mut tape, features)?;
        SoftmaxMaps::new(tape.value(out).clone())
    }
}

/// Runs the frozen classifier's encoder and the decoder on one image.
pub fn decode(classifier: &Classifier, decoder: &Decoder, x: &Tensor) -> Result<SoftmaxMaps> {
    if !classifier.is_frozen() {
        return Err(Error::State("decode requires a frozen classifier".into()));
    }
    if classifier.arch() != decoder.arch() {
        return Err(Error::Config(
            "classifier and decoder architectures differ".into(),
        ));
    }
    decoder.predict(&classifier.encode(x)?)
}
