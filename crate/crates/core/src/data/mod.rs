//! Synthetic dataset generation, Netpbm I/O and split loading.
//!
//! Ground-truth masks of training and plain validation images are written to
//! disk but never handed to the weakly-supervised training path: samples from
//! those splits carry a withheld mask and reading it is an error.

pub mod generate;
pub mod index;
pub mod netpbm;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use generate::{generate_dataset, render, GenParams, Profile, Rendered, SplitCounts, Texture};
pub use index::{DatasetIndex, IndexRecord, Split};

/// Whether a ground-truth mask may be read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskAccess {
    Available(Vec<bool>),
    Withheld,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub image_id: u64,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub fully_negative: bool,
    mask: MaskAccess,
}

impl ImageSample {
    pub fn new(
        image_id: u64,
        image: Tensor,
        label: usize,
        fully_negative: bool,
        mask: MaskAccess,
    ) -> Self {
        ImageSample {
            image_id,
            image,
            label,
            fully_negative,
            mask,
        }
    }

    /// The ground-truth mask, or [`Error::MaskWithheld`] for splits whose
    /// masks are not part of the protocol.
    pub fn mask(&self) -> Result<&[bool]> {
        match &self.mask {
            MaskAccess::Available(m) => Ok(m),
            MaskAccess::Withheld => Err(Error::MaskWithheld {
                image_id: self.image_id,
            }),
        }
    }

    pub fn has_mask(&self) -> bool {
        matches!(self.mask, MaskAccess::Available(_))
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Who is asking for a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskPolicy {
    /// Masks only for `test` and `valid_pixel_labeled`.
    #[default]
    Protocol,
    /// Fully supervised reference training: training masks are readable too.
    FullSupervision,
}

fn mask_allowed(split: Split, policy: MaskPolicy) -> bool {
    match split {
        Split::Test | Split::ValidPixelLabeled => true,
        Split::Train => policy == MaskPolicy::FullSupervision,
        Split::Valid => false,
    }
}

/// Loads every record of `split` in index order.
pub fn load_split(
    index: &DatasetIndex,
    split: Split,
    policy: MaskPolicy,
) -> Result<Vec<ImageSample>> {
    let records: Vec<&IndexRecord> = index.split(split).collect();
    if records.is_empty() {
        return Err(Error::Precondition(format!(
            "split {split} is missing from {}",
            index.path().display()
        )));
    }
    records
        .into_iter()
        .map(|r| {
            let image = netpbm::load_ppm(&index.root().join(&r.image_path))?;
            let mask = if mask_allowed(split, policy) {
                let m = netpbm::load_pgm(&index.root().join(&r.mask_path))?;
                if (m.height, m.width) != (image.shape()[1], image.shape()[2]) {
                    return Err(Error::dim(
                        "mask",
                        format!("mask of image {} does not match its image size", r.image_id),
                    ));
                }
                MaskAccess::Available(m.values)
            } else {
                MaskAccess::Withheld
            };
            Ok(ImageSample::new(
                r.image_id,
                image,
                r.label,
                r.fully_negative,
                mask,
            ))
        })
        .collect()
}
