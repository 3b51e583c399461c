//! Training objective for the decoder.
//!
//! Images with a region of interest are trained with a partial binary
//! cross-entropy over the sampled evidence pixels, scaled by `lambda`. Images
//! known to contain no region of interest are trained to predict background
//! everywhere. Exactly one of the two terms is active per image.
//!
//! Every function returns the loss together with its gradient with respect to
//! the `[2, H, W]` softmax tensor, ready to seed [`crate::numerics::Tape::backward`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{PixelLabel, PseudoMask, SamplingMode};
use crate::networks::SoftmaxMaps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Which parts of the objective are enabled. Images without a region of
/// interest never use classifier evidence, so with `fully_negative` disabled
/// they contribute nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossTerms {
    pub positive: bool,
    pub negative: bool,
    pub fully_negative: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            positive: true,
            negative: true,
            fully_negative: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    /// Evidence pixels per region.
    pub n: usize,
    pub mode: SamplingMode,
    pub prob_clamp: f64,
    pub negative_reduction: Reduction,
    /// Use `-log(1 - S0)` for background pixels instead of `-log(S0)`.
    pub paper_literal_loss: bool,
    pub terms: LossTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            n: 1,
            mode: SamplingMode::Random,
            prob_clamp: 1e-8,
            negative_reduction: Reduction::Mean,
            paper_literal_loss: false,
            terms: LossTerms::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(Error::Config(format!(
                "prob_clamp must be in (0, 0.5), got {}",
                self.prob_clamp
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Evidence,
    FullyNegative,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Evidence => "evidence",
            Branch::FullyNegative => "fully_negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub evidence_term: f64,
    pub negative_term: f64,
    pub branch: Branch,
}

/// A scalar loss and its gradient with respect to the softmax tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `-log(clamp(p))` and its derivative in `p`. Outside the clamp range the
/// loss is flat.
fn neg_log(p: f64, eps: f64) -> (f64, f64) {
    if p < eps {
        (-eps.ln(), 0.0)
    } else if p > 1.0 - eps {
        (-(1.0 - eps).ln(), 0.0)
    } else {
        (-p.ln(), -1.0 / p)
    }
}

/// Background-pixel loss and its derivatives `(d/dS0, d/dS1)`.
fn background_term(s0: f64, eps: f64, literal: bool) -> (f64, f64, f64) {
    if literal {
        let (v, d) = neg_log(1.0 - s0, eps);
        (v, -d, 0.0)
    } else {
        let (v, d) = neg_log(s0, eps);
        (v, d, 0.0)
    }
}

fn foreground_term(s1: f64, eps: f64) -> (f64, f64, f64) {
    let (v, d) = neg_log(s1, eps);
    (v, 0.0, d)
}

/// Binary cross-entropy at one pixel for label `foreground`:
/// `-(1 - y) log S0 - y log S1`, probabilities clamped to `[eps, 1 - eps]`.
pub fn pixel_bce(foreground: bool, s0: f64, s1: f64, eps: f64) -> f64 {
    pixel_bce_grad(foreground, s0, s1, eps, false).0
}

/// Like [`pixel_bce`], also returning `(d/dS0, d/dS1)`. With `literal` the
/// background case uses `-log(1 - S0)`.
pub fn pixel_bce_grad(
    foreground: bool,
    s0: f64,
    s1: f64,
    eps: f64,
    literal: bool,
) -> (f64, f64, f64) {
    if foreground {
        foreground_term(s1, eps)
    } else {
        background_term(s0, eps, literal)
    }
}

/// Sum of [`pixel_bce`] over the labelled pixels of `mask`.
pub fn partial_ce(maps: &SoftmaxMaps, mask: &PseudoMask, cfg: &LossConfig) -> Result<Objective> {
    partial_ce_filtered(maps, mask, cfg, LossTerms::default())
}

fn partial_ce_filtered(
    maps: &SoftmaxMaps,
    mask: &PseudoMask,
    cfg: &LossConfig,
    terms: LossTerms,
) -> Result<Objective> {
    let hw = maps.num_pixels();
    if mask.labels.len() != hw {
        return Err(Error::dim(
            "mask",
            format!("{} labels for {hw} pixels", mask.labels.len()),
        ));
    }
    let (s0, s1) = (maps.background(), maps.foreground());
    let mut grad = vec![0.0; 2 * hw];
    let mut value = 0.0;
    let mut used = 0;
    for (p, label) in mask.labeled() {
        let fg = match label {
            PixelLabel::Foreground if terms.positive => true,
            PixelLabel::Background if terms.negative => false,
            _ => continue,
        };
        let (v, d0, d1) = pixel_bce_grad(fg, s0[p], s1[p], cfg.prob_clamp, cfg.paper_literal_loss);
        value += v;
        grad[p] += d0;
        grad[hw + p] += d1;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Precondition(
            "partial cross-entropy needs at least one labelled pixel".into(),
        ));
    }
    Ok(Objective { value, grad })
}

/// Background loss over every pixel, `-log S0` (clamped), reduced by mean or sum.
pub fn negative_sample_loss(maps: &SoftmaxMaps, cfg: &LossConfig) -> Objective {
    let hw = maps.num_pixels();
    let scale = match cfg.negative_reduction {
        Reduction::Mean => 1.0 / hw as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = vec![0.0; 2 * hw];
    let mut value = 0.0;
    for (p, &s0) in maps.background().iter().enumerate() {
        let (v, d0, _) = background_term(s0, cfg.prob_clamp, cfg.paper_literal_loss);
        value += v;
        grad[p] = d0 * scale;
    }
    Objective {
        value: value * scale,
        grad,
    }
}

/// The gated objective for one image.
pub fn total_loss(
    maps: &SoftmaxMaps,
    mask: &PseudoMask,
    is_fully_negative: bool,
    cfg: &LossConfig,
) -> Result<(LossValue, Vec<f64>)> {
    if is_fully_negative {
        if !cfg.terms.fully_negative {
            let value = LossValue {
                total: 0.0,
                evidence_term: 0.0,
                negative_term: 0.0,
                branch: Branch::FullyNegative,
            };
            return Ok((value, vec![0.0; 2 * maps.num_pixels()]));
        }
        let obj = negative_sample_loss(maps, cfg);
        let value = LossValue {
            total: obj.value,
            evidence_term: 0.0,
            negative_term: obj.value,
            branch: Branch::FullyNegative,
        };
        return Ok((value, obj.grad));
    }
    let obj = partial_ce_filtered(maps, mask, cfg, cfg.terms)?;
    let evidence = cfg.lambda * obj.value;
    let grad = obj.grad.into_iter().map(|g| g * cfg.lambda).collect();
    let value = LossValue {
        total: evidence,
        evidence_term: evidence,
        negative_term: 0.0,
        branch: Branch::Evidence,
    };
    Ok((value, grad))
}

/// Mean per-pixel cross-entropy against a full binary mask; the
/// fully-supervised reference objective.
pub fn supervised_bce(maps: &SoftmaxMaps, mask: &[bool], eps: f64) -> Result<Objective> {
    let hw = maps.num_pixels();
    if mask.len() != hw {
        return Err(Error::dim(
            "mask",
            format!("{} labels for {hw} pixels", mask.len()),
        ));
    }
    let (s0, s1) = (maps.background(), maps.foreground());
    let scale = 1.0 / hw as f64;
    let mut grad = vec![0.0; 2 * hw];
    let mut value = 0.0;
    for (p, &fg) in mask.iter().enumerate() {
        let (v, d0, d1) = pixel_bce_grad(fg, s0[p], s1[p], eps, false);
        value += v;
        grad[p] = d0 * scale;
        grad[hw + p] = d1 * scale;
    }
    Ok(Objective {
        value: value * scale,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{build_pseudo_mask, EvidenceSet};

    const EPS: f64 = 1e-8;

    fn maps(fg: &[f64], h: usize, w: usize) -> SoftmaxMaps {
        SoftmaxMaps::from_foreground(fg, h, w).unwrap()
    }

    fn mask(pos: Vec<usize>, neg: Vec<usize>, h: usize, w: usize) -> PseudoMask {
        let ev = EvidenceSet {
            positive: pos,
            negative: neg,
            n: 1,
            mode: SamplingMode::Random,
        };
        build_pseudo_mask(&ev, h, w).unwrap()
    }

    #[test]
    fn bce_closed_forms() {
        assert!((pixel_bce(true, 0.5, 0.5, EPS) - 2f64.ln()).abs() < 1e-12);
        assert!(pixel_bce(false, 1.0 - EPS, EPS, EPS).abs() < 1e-7);
        assert!((pixel_bce(true, 0.75, 0.25, EPS) - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn partial_ce_adds_labelled_pixels() {
        let m = maps(&[0.5; 4], 2, 2);
        let y = mask(vec![0], vec![3], 2, 2);
        let obj = partial_ce(&m, &y, &LossConfig::default()).unwrap();
        assert!((obj.value - 1.3863).abs() < 1e-4);
        assert_eq!(obj.grad[1], 0.0);
        assert_eq!(obj.grad[4 + 2], 0.0);
    }

    #[test]
    fn partial_ce_needs_labels() {
        let m = maps(&[0.5; 4], 2, 2);
        let y = mask(vec![], vec![], 2, 2);
        assert!(matches!(
            partial_ce(&m, &y, &LossConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let m = maps(&[1.0, 0.0], 1, 2);
        let y = mask(vec![0], vec![1], 1, 2);
        assert!(partial_ce(&m, &y, &LossConfig::default()).unwrap().value < 1e-7);
    }

    #[test]
    fn negative_term_reductions() {
        let cfg = LossConfig::default();
        assert!(negative_sample_loss(&maps(&[EPS; 16], 4, 4), &cfg).value < 1e-7);
        let half = maps(&[0.5; 16], 4, 4);
        assert!((negative_sample_loss(&half, &cfg).value - 2f64.ln()).abs() < 1e-12);
        let sum_cfg = LossConfig {
            negative_reduction: Reduction::Sum,
            ..cfg
        };
        assert!((negative_sample_loss(&half, &sum_cfg).value - 16.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gating_and_scaling() {
        let m = maps(&[0.5; 4], 2, 2);
        let y = mask(vec![0], vec![3], 2, 2);
        let (v, _) = total_loss(&m, &y, true, &LossConfig::default()).unwrap();
        assert_eq!(v.evidence_term, 0.0);
        assert_eq!(v.branch, Branch::FullyNegative);

        let zero = LossConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let (v, g) = total_loss(&m, &y, false, &zero).unwrap();
        assert_eq!(v.total, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));

        let tenth = LossConfig {
            lambda: 0.1,
            ..Default::default()
        };
        let (v, _) = total_loss(&m, &y, false, &tenth).unwrap();
        assert!((v.total - 0.13863).abs() < 1e-5);
        assert_eq!(v.negative_term, 0.0);
    }

    #[test]
    fn disabled_fully_negative_term_drops_negatives() {
        let cfg = LossConfig {
            terms: LossTerms {
                fully_negative: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = maps(&[0.5; 4], 2, 2);
        let (v, g) = total_loss(&m, &mask(vec![1], vec![2], 2, 2), true, &cfg).unwrap();
        assert_eq!(v.branch, Branch::FullyNegative);
        assert_eq!(v.total, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn positive_only_ignores_background_evidence() {
        let cfg = LossConfig {
            terms: LossTerms {
                negative: false,
                fully_negative: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = maps(&[0.5; 4], 2, 2);
        let (v, g) = total_loss(&m, &mask(vec![1], vec![2], 2, 2), false, &cfg).unwrap();
        assert!((v.total - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn validation() {
        assert!(LossConfig::default().validate().is_ok());
        for bad in [
            LossConfig {
                lambda: -1.0,
                ..Default::default()
            },
            LossConfig {
                prob_clamp: 0.5,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
