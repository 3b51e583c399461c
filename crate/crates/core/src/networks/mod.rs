//! The frozen classifier with its CAM head and the U-Net style decoder.

mod cam;
mod classifier;
mod decoder;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cam::{cam_from_features, Cam};
pub(crate) use classifier::argmax;
pub use classifier::{build_classifier, class_cross_entropy, Classifier, EncoderFeatures};
pub use decoder::{decode, Decoder, SoftmaxMaps};

/// Network geometry shared by the classifier and the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Side of the square input images.
    pub image_size: usize,
    pub in_channels: usize,
    /// Encoder width per down-stage. Each stage is conv-relu-conv-relu-maxpool.
    pub widths: Vec<usize>,
    /// Decoder width per up-stage, indexed like `widths`.
    pub decoder_widths: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_size: 32,
            in_channels: 3,
            widths: vec![8, 16, 32],
            decoder_widths: vec![8, 8, 16],
            num_classes: 2,
        }
    }
}

impl ArchConfig {
    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Spatial stride of the final feature maps.
    pub fn feature_stride(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "invalid encoder widths {:?}",
                self.widths
            )));
        }
        if self.decoder_widths.len() != self.widths.len() || self.decoder_widths.contains(&0) {
            return Err(Error::Config(format!(
                "decoder widths {:?} must be positive, one per encoder stage",
                self.decoder_widths
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.feature_stride()) {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {}",
                self.image_size,
                self.feature_stride()
            )));
        }
        Ok(())
    }
}

/// Seeded generator for parameter initialization; `stream` separates the
/// classifier from the decoder under one run seed.
pub(crate) fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
