//! Sampling of sparse foreground/background pixel pseudo-labels from a CAM.
//!
//! Foreground pixels are drawn with probability proportional to the CAM,
//! background pixels proportional to `1 - CAM` among the pixels not already
//! taken as foreground. Draws within a region are without replacement; a
//! region whose remaining weights are all zero falls back to uniform.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Cam;

/// Random generator handed out by [`resample_schedule`].
pub type EvidenceRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Fresh multinomial draws every step.
    #[default]
    Random,
    /// Top-n / bottom-n pixels by activation, identical every step.
    Static,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Random => "random",
            SamplingMode::Static => "static",
        })
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplingMode::Random),
            "static" => Ok(SamplingMode::Static),
            other => Err(Error::Config(format!("unknown sampling mode {other:?}"))),
        }
    }
}

/// Pixel indices (row-major) chosen as foreground and background evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceSet {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub n: usize,
    pub mode: SamplingMode,
}

impl EvidenceSet {
    /// One structured-text line for audit dumps.
    pub fn record(&self, image_id: u64, epoch: u64) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        format!(
            "image_id={image_id}\tepoch={epoch}\tmode={}\tpositive={}\tnegative={}",
            self.mode,
            join(&self.positive),
            join(&self.negative)
        )
    }
}

/// Deterministic stream for one `(seed, image, epoch)` triple. Distinct
/// triples key distinct ChaCha streams.
pub fn resample_schedule(global_seed: u64, image_id: u64, epoch: u64) -> EvidenceRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&global_seed.to_le_bytes());
    key[8..16].copy_from_slice(&image_id.to_le_bytes());
    key[16..24].copy_from_slice(&epoch.to_le_bytes());
    key[24..].copy_from_slice(b"evidence");
    ChaCha8Rng::from_seed(key)
}

/// Draws one index with probability proportional to `weight(i)` among the
/// indices not marked in `taken`; uniform if the eligible weights sum to zero.
fn weighted_draw<R, W>(len: usize, weight: W, taken: &[bool], rng: &mut R) -> usize
where
    R: Rng + ?Sized,
    W: Fn(usize) -> f64,
{
    let total: f64 = (0..len).filter(|&i| !taken[i]).map(&weight).sum();
    let eligible = || (0..len).filter(|&i| !taken[i]);
    if total > 0.0 {
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for i in eligible() {
            let w = weight(i);
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = Some(i);
            if acc > target {
                return i;
            }
        }
        // rounding left target at the very top of the range
        last.expect("positive total implies a positive weight")
    } else {
        let count = eligible().count();
        let k = rng.random_range(0..count);
        eligible().nth(k).expect("k < count")
    }
}

fn draw_without_replacement<R, W>(
    n: usize,
    len: usize,
    weight: W,
    taken: &mut [bool],
    rng: &mut R,
) -> Vec<usize>
where
    R: Rng + ?Sized,
    W: Fn(usize) -> f64,
{
    (0..n)
        .map(|_| {
            let i = weighted_draw(len, &weight, taken, rng);
            taken[i] = true;
            i
        })
        .collect()
}

pub fn sample_evidence<R: Rng + ?Sized>(
    cam: &Cam,
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<EvidenceSet> {
    let len = cam.len();
    if len == 0 {
        return Err(Error::dim(
            "pixels",
            "cannot sample evidence from an empty map",
        ));
    }
    if n == 0 || n > len / 2 {
        return Err(Error::Config(format!(
            "need 1 <= n <= {} pixels per region, got {n}",
            len / 2
        )));
    }
    let c = &cam.values;
    let (positive, negative) = match mode {
        SamplingMode::Random => {
            let mut taken = vec![false; len];
            let pos = draw_without_replacement(n, len, |i| c[i], &mut taken, rng);
            let neg = draw_without_replacement(n, len, |i| 1.0 - c[i], &mut taken, rng);
            (pos, neg)
        }
        SamplingMode::Static => {
            let mut order: Vec<usize> = (0..len).collect();
            order.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
            let pos: Vec<usize> = order[..n].to_vec();
            order.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
            let neg = order
                .into_iter()
                .filter(|i| !pos.contains(i))
                .take(n)
                .collect();
            (pos, neg)
        }
    };
    Ok(EvidenceSet {
        positive,
        negative,
        n,
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLabel {
    Unknown,
    Background,
    Foreground,
}

/// Partially labelled mask: evidence pixels carry a label, the rest are unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoMask {
    pub labels: Vec<PixelLabel>,
    pub height: usize,
    pub width: usize,
}

impl PseudoMask {
    pub fn labeled(&self) -> impl Iterator<Item = (usize, PixelLabel)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l != PixelLabel::Unknown)
            .map(|(i, &l)| (i, l))
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled().count()
    }

    /// Foreground and background indices in ascending order.
    pub fn index_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let pick = |want| {
            self.labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == want)
                .map(|(i, _)| i)
                .collect()
        };
        (pick(PixelLabel::Foreground), pick(PixelLabel::Background))
    }
}

pub fn build_pseudo_mask(ev: &EvidenceSet, height: usize, width: usize) -> Result<PseudoMask> {
    let len = height * width;
    let mut labels = vec![PixelLabel::Unknown; len];
    for (set, label) in [
        (&ev.positive, PixelLabel::Foreground),
        (&ev.negative, PixelLabel::Background),
    ] {
        for &i in set {
            if i >= len {
                return Err(Error::dim(
                    "pixel",
                    format!("index {i} outside a {height}x{width} mask"),
                ));
            }
            labels[i] = label;
        }
    }
    Ok(PseudoMask {
        labels,
        height,
        width,
    })
}
