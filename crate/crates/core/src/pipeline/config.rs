use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::data::{GenParams, Profile, SplitCounts};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::networks::ArchConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHypers {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl TrainHypers {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "{what}: learning rate must be finite and >= 0"
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!(
                "{what}: batch size must be positive"
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("{what}: weight decay must be >= 0")));
        }
        Ok(())
    }
}

fn classifier_defaults() -> TrainHypers {
    TrainHypers {
        lr: 0.01,
        epochs: 30,
        batch_size: 8,
        weight_decay: 1e-4,
    }
}

fn decoder_defaults() -> TrainHypers {
    TrainHypers {
        lr: 0.01,
        epochs: 60,
        batch_size: 32,
        weight_decay: 1e-4,
    }
}

/// A `[classifier]` or `[decoder]` table; omitted keys keep that phase's defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialHypers {
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    weight_decay: Option<f64>,
}

impl PartialHypers {
    fn fill(self, d: TrainHypers) -> TrainHypers {
        TrainHypers {
            lr: self.lr.unwrap_or(d.lr),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
        }
    }
}

fn de_classifier<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TrainHypers, D::Error> {
    Ok(PartialHypers::deserialize(d)?.fill(classifier_defaults()))
}

fn de_decoder<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TrainHypers, D::Error> {
    Ok(PartialHypers::deserialize(d)?.fill(decoder_defaults()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset directory; `<out>/data` when unset.
    pub dir: Option<PathBuf>,
    /// Generator seed; the run seed when unset.
    pub seed: Option<u64>,
    pub profile: Profile,
    pub counts: SplitCounts,
    pub generator: GenParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            seed: None,
            profile: Profile::Cam16Like,
            counts: SplitCounts::default(),
            generator: GenParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Average per-image PxAP instead of pooling all pixels.
    pub per_image_mean: bool,
}

/// Everything a run depends on. Stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub arch: ArchConfig,
    #[serde(default = "classifier_defaults", deserialize_with = "de_classifier")]
    pub classifier: TrainHypers,
    #[serde(default = "decoder_defaults", deserialize_with = "de_decoder")]
    pub decoder: TrainHypers,
    pub loss: LossConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            arch: ArchConfig::default(),
            classifier: classifier_defaults(),
            decoder: decoder_defaults(),
            loss: LossConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        self.data.generator.validate()?;
        self.classifier.validate("classifier")?;
        self.decoder.validate("decoder")?;
        if self.data.generator.image_size != self.arch.image_size {
            return Err(Error::Config(format!(
                "generator image size {} differs from network input size {}",
                self.data.generator.image_size, self.arch.image_size
            )));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data
            .dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.out_dir.join("ckpt")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
