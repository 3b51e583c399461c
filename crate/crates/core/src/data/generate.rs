//! Seeded synthetic tissue-like images with elliptical textured regions.
//!
//! Foreground and background share a mean colour and differ only in texture:
//! the background is a smooth low-amplitude field, regions of interest carry
//! a fine high-amplitude one.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::index::{DatasetIndex, IndexRecord, Split};
use super::netpbm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Both classes carry regions of interest, with different textures.
    GlasLike,
    /// Class 0 images contain no region of interest at all.
    #[default]
    Cam16Like,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glas_like" => Ok(Profile::GlasLike),
            "cam16_like" => Ok(Profile::Cam16Like),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::GlasLike => "glas_like",
            Profile::Cam16Like => "cam16_like",
        })
    }
}

/// Gaussian noise, box-blurred `passes` times with the given radius, then
/// rescaled to standard deviation `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub amplitude: f64,
    pub blur_radius: usize,
    pub passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub image_size: usize,
    pub blob_count: [usize; 2],
    pub blob_radius: [f64; 2],
    /// Accepted foreground fraction for images with regions of interest.
    pub fg_fraction: [f64; 2],
    pub base_color: [f64; 3],
    pub background: Texture,
    pub foreground: Texture,
    /// Region texture of class 0 under the glas_like profile.
    pub alt_foreground: Texture,
    /// Per-channel iid noise added everywhere.
    pub channel_noise: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            image_size: 32,
            blob_count: [1, 4],
            blob_radius: [3.0, 8.0],
            fg_fraction: [0.04, 0.5],
            base_color: [0.62, 0.48, 0.58],
            background: Texture {
                amplitude: 0.05,
                blur_radius: 2,
                passes: 2,
            },
            foreground: Texture {
                amplitude: 0.18,
                blur_radius: 0,
                passes: 0,
            },
            alt_foreground: Texture {
                amplitude: 0.12,
                blur_radius: 1,
                passes: 1,
            },
            channel_noise: 0.01,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let [r_lo, r_hi] = self.blob_radius;
        if !(r_lo > 0.0 && r_lo <= r_hi) {
            return Err(Error::Config(format!(
                "invalid blob radius range {:?}",
                self.blob_radius
            )));
        }
        if 2.0 * r_hi >= self.image_size as f64 {
            return Err(Error::Config(format!(
                "blob radius {r_hi} does not fit in a {} pixel image",
                self.image_size
            )));
        }
        let [c_lo, c_hi] = self.blob_count;
        if c_lo == 0 || c_lo > c_hi {
            return Err(Error::Config(format!(
                "invalid blob count range {:?}",
                self.blob_count
            )));
        }
        let [f_lo, f_hi] = self.fg_fraction;
        if !(0.0..=1.0).contains(&f_lo) || !(f_lo < f_hi && f_hi <= 1.0) {
            return Err(Error::Config(format!(
                "invalid foreground fraction range {:?}",
                self.fg_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Validation images per class whose masks are available for model selection.
    pub pixel_labeled_per_class: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 200,
            valid: 40,
            test: 100,
            pixel_labeled_per_class: 3,
        }
    }
}

/// One rendered image before it is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Tensor,
    pub mask: Vec<bool>,
}

fn image_rng(seed: u64, image_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&image_id.to_le_bytes());
    key[24..].copy_from_slice(b"syntheti");
    ChaCha8Rng::from_seed(key)
}

fn box_blur(field: &mut [f64], size: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let r = radius as isize;
    let n = size as isize;
    let mut tmp = vec![0.0; field.len()];
    let at = |v: isize| v.clamp(0, n - 1) as usize;
    for y in 0..size {
        for x in 0..size {
            let s: f64 = (-r..=r).map(|d| field[y * size + at(x as isize + d)]).sum();
            tmp[y * size + x] = s / (2 * r + 1) as f64;
        }
    }
    for y in 0..size {
        for x in 0..size {
            let s: f64 = (-r..=r).map(|d| tmp[at(y as isize + d) * size + x]).sum();
            field[y * size + x] = s / (2 * r + 1) as f64;
        }
    }
}

fn texture_field<R: Rng>(tex: &Texture, size: usize, rng: &mut R) -> Vec<f64> {
    let mut field: Vec<f64> = (0..size * size)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    for _ in 0..tex.passes {
        box_blur(&mut field, size, tex.blur_radius);
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let sd = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64).sqrt();
    field
        .iter()
        .map(|v| (v - mean) / sd * tex.amplitude)
        .collect()
}

fn blob_mask<R: Rng>(params: &GenParams, rng: &mut R) -> Result<Vec<bool>> {
    let size = params.image_size;
    for _ in 0..1000 {
        let mut mask = vec![false; size * size];
        let count = rng.random_range(params.blob_count[0]..=params.blob_count[1]);
        for _ in 0..count {
            let ry = rng.random_range(params.blob_radius[0]..=params.blob_radius[1]);
            let rx = rng.random_range(params.blob_radius[0]..=params.blob_radius[1]);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let reach = ry.max(rx);
            let cy = rng.random_range(reach..=size as f64 - reach);
            let cx = rng.random_range(reach..=size as f64 - reach);
            let (sin, cos) = theta.sin_cos();
            for y in 0..size {
                for x in 0..size {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let u = (dx * cos + dy * sin) / rx;
                    let v = (-dx * sin + dy * cos) / ry;
                    if u * u + v * v <= 1.0 {
                        mask[y * size + x] = true;
                    }
                }
            }
        }
        let frac = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        if frac >= params.fg_fraction[0] && frac <= params.fg_fraction[1] {
            return Ok(mask);
        }
    }
    Err(Error::Config(format!(
        "could not place blobs within foreground fraction {:?}",
        params.fg_fraction
    )))
}

/// Renders one image; a pure function of `(seed, image_id, label, profile, params)`.
pub fn render(
    seed: u64,
    image_id: u64,
    label: usize,
    profile: Profile,
    params: &GenParams,
) -> Result<Rendered> {
    params.validate()?;
    let size = params.image_size;
    let mut rng = image_rng(seed, image_id);
    let region_texture = match (profile, label) {
        (_, 1) => Some(params.foreground),
        (Profile::GlasLike, 0) => Some(params.alt_foreground),
        (Profile::Cam16Like, 0) => None,
        (_, other) => {
            return Err(Error::Config(format!(
                "synthetic data has 2 classes, got label {other}"
            )))
        }
    };
    let background = texture_field(&params.background, size, &mut rng);
    let hw = size * size;
    let (mask, region) = match region_texture {
        Some(tex) => (
            blob_mask(params, &mut rng)?,
            texture_field(&tex, size, &mut rng),
        ),
        None => (vec![false; hw], vec![0.0; hw]),
    };
    let mut values = vec![0.0; 3 * hw];
    for (ch, &base) in params.base_color.iter().enumerate() {
        for p in 0..hw {
            let field = if mask[p] { region[p] } else { background[p] };
            let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * params.channel_noise;
            values[ch * hw + p] = (base + field + jitter).clamp(0.0, 1.0);
        }
    }
    Ok(Rendered {
        image: Tensor::new(vec![3, size, size], values)?,
        mask,
    })
}

fn is_fully_negative(profile: Profile, label: usize) -> bool {
    profile == Profile::Cam16Like && label == 0
}

/// Writes images, masks and `index.tsv` under `out_dir`. Labels alternate
/// within each split; image ids are unique across splits.
pub fn generate_dataset(
    out_dir: &Path,
    seed: u64,
    counts: &SplitCounts,
    profile: Profile,
    params: &GenParams,
) -> Result<DatasetIndex> {
    params.validate()?;
    if counts.train == 0 || counts.valid == 0 || counts.test == 0 {
        return Err(Error::Config(format!(
            "every split needs at least one image: {counts:?}"
        )));
    }
    for dir in ["images", "masks"] {
        let d = out_dir.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::new();
    let mut next_id = 0u64;
    let mut valid_ids: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (split, count) in [
        (Split::Train, counts.train),
        (Split::Valid, counts.valid),
        (Split::Test, counts.test),
    ] {
        for i in 0..count {
            let label = i % 2;
            let image_id = next_id;
            next_id += 1;
            let rendered = render(seed, image_id, label, profile, params)?;
            let image_path = format!("images/{image_id:05}.ppm");
            let mask_path = format!("masks/{image_id:05}.pgm");
            netpbm::save(
                &out_dir.join(&image_path),
                &netpbm::write_ppm(&rendered.image)?,
            )?;
            netpbm::save(
                &out_dir.join(&mask_path),
                &netpbm::write_pgm(&rendered.mask, params.image_size, params.image_size)?,
            )?;
            if split == Split::Valid {
                valid_ids[label].push(records.len());
            }
            records.push(IndexRecord {
                split,
                image_id,
                image_path,
                mask_path,
                label,
                fully_negative: is_fully_negative(profile, label),
            });
        }
    }
    let mut rng = image_rng(seed, u64::MAX);
    let mut labeled = Vec::new();
    for ids in &valid_ids {
        if ids.len() < counts.pixel_labeled_per_class {
            return Err(Error::Config(format!(
                "only {} validation images in a class, {} requested with masks",
                ids.len(),
                counts.pixel_labeled_per_class
            )));
        }
        let mut picked: Vec<usize> =
            sample_indices(&mut rng, ids.len(), counts.pixel_labeled_per_class)
                .into_iter()
                .map(|k| ids[k])
                .collect();
        picked.sort();
        labeled.extend(picked);
    }
    labeled.sort();
    for r in labeled {
        records.push(IndexRecord {
            split: Split::ValidPixelLabeled,
            ..records[r].clone()
        });
    }
    let index = DatasetIndex::new(out_dir.to_path_buf(), records);
    index.save()?;
    Ok(index)
}
