use crate::error::{Error, Result};
use crate::numerics::ops::resize_bilinear;
use crate::numerics::Tensor;

/// Below this range a CAM is treated as flat.
const DEGENERATE_RANGE: f64 = 1e-12;

/// Class activation map normalized to `[0, 1]` at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub class: usize,
}

impl Cam {
    /// Min-max normalizes `raw`. A flat map becomes constant 0.5 so that
    /// foreground and background sampling both degrade to uniform.
    pub fn normalize(raw: Vec<f64>, height: usize, width: usize, class: usize) -> Result<Cam> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(Error::dim(
                "cam",
                format!("{} values for a {height}x{width} map", raw.len()),
            ));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Numeric("non-finite activation map".into()));
        }
        let values = if hi - lo < DEGENERATE_RANGE {
            vec![0.5; raw.len()]
        } else {
            raw.into_iter()
                .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
                .collect()
        };
        Ok(Cam {
            values,
            height,
            width,
            class,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&v| v == 0.5)
    }
}

/// `sum_k weights[k] * features[k]`, bilinearly resized to `out_h x out_w`,
/// then normalized.
pub fn cam_from_features(
    features: &Tensor,
    weights: &[f64],
    out_h: usize,
    out_w: usize,
    class: usize,
) -> Result<Cam> {
    let (c, h, w) = features.chw()?;
    if weights.len() != c {
        return Err(Error::dim(
            "channels",
            format!("{} CAM weights for {c} feature channels", weights.len()),
        ));
    }
    let mut raw = vec![0.0; h * w];
    for (plane, &wk) in features.values().chunks(h * w).zip(weights) {
        for (r, &a) in raw.iter_mut().zip(plane) {
            *r += wk * a;
        }
    }
    Cam::normalize(
        resize_bilinear(&raw, h, w, out_h, out_w),
        out_h,
        out_w,
        class,
    )
}
