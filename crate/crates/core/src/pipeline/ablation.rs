//! One decoder run per value of a single loss/sampling knob, with a shared
//! seed and frozen classifier.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evidence::SamplingMode;
use crate::loss::LossTerms;
use crate::networks::Classifier;

use super::config::RunConfig;
use super::run::Splits;
use super::train::{self, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    LossTerms,
    SamplingMode,
    N,
    Lambda,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::LossTerms => "loss_terms",
            AblationAxis::SamplingMode => "sampling_mode",
            AblationAxis::N => "n",
            AblationAxis::Lambda => "lambda",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationAxis::LossTerms => &["pos", "pos_neg", "pos_neg_full"],
            AblationAxis::SamplingMode => &["random", "static"],
            AblationAxis::N => &["1", "10"],
            AblationAxis::Lambda => &["1", "0.0001"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    pub fn parse_value(self, raw: &str) -> Result<AblationValue> {
        let bad = || {
            Error::Config(format!(
                "bad value {raw:?} for ablation axis {}",
                self.name()
            ))
        };
        Ok(match self {
            AblationAxis::LossTerms => AblationValue::Terms(match raw {
                "pos" => LossTerms {
                    positive: true,
                    negative: false,
                    fully_negative: false,
                },
                "pos_neg" => LossTerms {
                    positive: true,
                    negative: true,
                    fully_negative: false,
                },
                "pos_neg_full" => LossTerms::default(),
                _ => return Err(bad()),
            }),
            AblationAxis::SamplingMode => AblationValue::Mode(raw.parse()?),
            AblationAxis::N => AblationValue::N(raw.parse().map_err(|_| bad())?),
            AblationAxis::Lambda => AblationValue::Lambda(raw.parse().map_err(|_| bad())?),
        })
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            AblationAxis::LossTerms,
            AblationAxis::SamplingMode,
            AblationAxis::N,
            AblationAxis::Lambda,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown ablation axis {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AblationValue {
    Terms(LossTerms),
    Mode(SamplingMode),
    N(usize),
    Lambda(f64),
}

impl AblationValue {
    pub fn apply(&self, cfg: &mut RunConfig) {
        match *self {
            AblationValue::Terms(t) => cfg.loss.terms = t,
            AblationValue::Mode(m) => cfg.loss.mode = m,
            AblationValue::N(n) => cfg.loss.n = n,
            AblationValue::Lambda(l) => cfg.loss.lambda = l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub terms: LossTerms,
    pub selected_epoch: usize,
    pub valid_pxap: f64,
    pub test_pxap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub seed: u64,
    pub cam_pxap: f64,
    pub rows: Vec<AblationRow>,
}

fn mark(on: bool) -> &'static str {
    if on {
        "yes"
    } else {
        "no"
    }
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis,value,pos,neg,full_neg,seed,selected_epoch,valid_pxap,test_pxap,cam_pxap\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.axis,
                r.value,
                mark(r.terms.positive),
                mark(r.terms.negative),
                mark(r.terms.fully_negative),
                self.seed,
                r.selected_epoch,
                r.valid_pxap,
                r.test_pxap,
                self.cam_pxap
            )
            .unwrap();
        }
        out
    }

    pub fn row(&self, value: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

/// Trains and evaluates one decoder under `base` with a single value applied.
pub fn ablation_row(
    base: &RunConfig,
    classifier: &Classifier,
    splits: &Splits,
    axis: AblationAxis,
    raw: &str,
) -> Result<AblationRow> {
    let mut cfg = base.clone();
    axis.parse_value(raw)?.apply(&mut cfg);
    cfg.validate()?;
    let run = train::train_decoder(&cfg, classifier, &splits.train, &splits.valid_labeled)?;
    let ev = train::evaluate(
        classifier,
        Some(&run.decoder),
        &splits.test,
        Source::Decoder,
        cfg.eval.per_image_mean,
    )?;
    let valid_pxap = train::select_model(&run.checkpoints)?.valid_pxap;
    Ok(AblationRow {
        value: raw.to_string(),
        terms: cfg.loss.terms,
        selected_epoch: run.selected_epoch,
        valid_pxap,
        test_pxap: ev.pxap,
    })
}

pub fn run_ablation(
    base: &RunConfig,
    classifier: &Classifier,
    splits: &Splits,
    axis: AblationAxis,
    values: &[String],
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::Precondition(format!(
            "ablation over {axis} needs at least one value"
        )));
    }
    for v in values {
        axis.parse_value(v)?;
    }
    let cam = train::evaluate(
        classifier,
        None,
        &splits.test,
        Source::Cam,
        base.eval.per_image_mean,
    )?;
    let rows = values
        .iter()
        .map(|v| ablation_row(base, classifier, splits, axis, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        axis,
        seed: base.seed,
        cam_pxap: cam.pxap,
        rows,
    })
}
