//! File-level orchestration: dataset preparation, checkpoints with TOML
//! sidecars, metrics CSVs and run reports under the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, load_split, DatasetIndex, ImageSample, MaskPolicy, Split};
use crate::error::{Error, Result};
use crate::networks::{ArchConfig, Classifier, Decoder};
use crate::numerics::{checkpoint, ParamSet};

use super::config::RunConfig;
use super::train::{self, ClassifierRun, DecoderRun, Evaluation, Source};

pub const CLASSIFIER_CKPT: &str = "classifier.ngv";
pub const DECODER_CKPT: &str = "decoder.ngv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CLASSIFIER_METRICS_FILE: &str = "classifier_metrics.csv";
pub const REPORT_FILE: &str = "report.toml";
pub const LR_GRID_FILE: &str = "lr_grid.csv";

/// Written next to every checkpoint as `<name>.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub seed: u64,
    pub epoch: usize,
    pub arch: ArchConfig,
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("toml")
}

pub fn save_checkpoint(params: &ParamSet, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    checkpoint::save(params, path)?;
    let side = sidecar_path(path);
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", side.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the dataset index, generating the synthetic set first if the
/// directory has none.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<DatasetIndex> {
    let dir = cfg.data_dir();
    if dir.join(crate::data::index::INDEX_FILE).exists() {
        return DatasetIndex::load(&dir);
    }
    if cfg.data.dir.is_some() {
        return Err(Error::Precondition(format!(
            "no dataset index in {}",
            dir.display()
        )));
    }
    generate_dataset(
        &dir,
        cfg.data_seed(),
        &cfg.data.counts,
        cfg.data.profile,
        &cfg.data.generator,
    )
}

/// All splits, loaded under the weak-supervision protocol.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<ImageSample>,
    pub valid: Vec<ImageSample>,
    pub valid_labeled: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

impl Splits {
    pub fn load(index: &DatasetIndex) -> Result<Self> {
        Ok(Splits {
            train: load_split(index, Split::Train, MaskPolicy::Protocol)?,
            valid: load_split(index, Split::Valid, MaskPolicy::Protocol)?,
            valid_labeled: load_split(index, Split::ValidPixelLabeled, MaskPolicy::Protocol)?,
            test: load_split(index, Split::Test, MaskPolicy::Protocol)?,
        })
    }
}

/// Trains the classifier and writes `ckpt/classifier.ngv` and its metrics.
pub fn run_train_classifier(cfg: &RunConfig, splits: &Splits) -> Result<ClassifierRun> {
    let run = train::train_classifier(cfg, &splits.train, &splits.valid)?;
    let meta = CheckpointMeta {
        kind: "classifier".into(),
        seed: cfg.seed,
        epoch: run.best_epoch,
        arch: cfg.arch.clone(),
    };
    save_checkpoint(
        run.classifier.params(),
        &cfg.ckpt_dir().join(CLASSIFIER_CKPT),
        &meta,
    )?;
    write_text(
        &cfg.out_dir.join(CLASSIFIER_METRICS_FILE),
        &run.metrics_csv(),
    )?;
    Ok(run)
}

/// Loads the classifier checkpoint of a run and freezes it.
pub fn load_classifier(cfg: &RunConfig) -> Result<Classifier> {
    let path = cfg.ckpt_dir().join(CLASSIFIER_CKPT);
    let meta = load_checkpoint_meta(&path)?;
    let mut classifier = Classifier::from_params(&meta.arch, checkpoint::load(&path)?)?;
    classifier.freeze();
    Ok(classifier)
}

pub fn load_decoder(cfg: &RunConfig) -> Result<Decoder> {
    let path = cfg.ckpt_dir().join(DECODER_CKPT);
    let meta = load_checkpoint_meta(&path)?;
    Decoder::from_params(&meta.arch, checkpoint::load(&path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_pxap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub supervised: bool,
    pub epochs: Vec<EpochRow>,
    pub selected_epoch: usize,
    pub test_pxap: f64,
    pub test_cam_pxap: f64,
    pub test_accuracy: f64,
    pub checkpoints: Vec<PathBuf>,
}

impl RunReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report is always serializable")
    }
}

/// Trains the decoder (weakly or fully supervised), writes per-epoch
/// checkpoints, the selected `decoder.ngv`, `metrics.csv` and the report.
pub fn run_train_decoder(
    cfg: &RunConfig,
    classifier: &Classifier,
    splits: &Splits,
    supervised: bool,
) -> Result<(DecoderRun, RunReport)> {
    let run = if supervised {
        let index = prepare_dataset(cfg)?;
        let train_full = load_split(&index, Split::Train, MaskPolicy::FullSupervision)?;
        train::train_decoder_supervised(cfg, classifier, &train_full, &splits.valid_labeled)?
    } else {
        train::train_decoder(cfg, classifier, &splits.train, &splits.valid_labeled)?
    };
    let kind = if supervised {
        "decoder_supervised"
    } else {
        "decoder"
    };
    let mut paths = Vec::with_capacity(run.checkpoints.len() + 1);
    for c in &run.checkpoints {
        let path = cfg
            .ckpt_dir()
            .join(format!("decoder_epoch{:03}.ngv", c.epoch));
        let meta = CheckpointMeta {
            kind: kind.into(),
            seed: cfg.seed,
            epoch: c.epoch,
            arch: cfg.arch.clone(),
        };
        save_checkpoint(&c.params, &path, &meta)?;
        paths.push(path);
    }
    let selected = cfg.ckpt_dir().join(DECODER_CKPT);
    let meta = CheckpointMeta {
        kind: kind.into(),
        seed: cfg.seed,
        epoch: run.selected_epoch,
        arch: cfg.arch.clone(),
    };
    save_checkpoint(run.decoder.params(), &selected, &meta)?;
    paths.push(selected);
    write_text(&cfg.out_dir.join(METRICS_FILE), &run.metrics_csv())?;

    let per_image = cfg.eval.per_image_mean;
    let dec = train::evaluate(
        classifier,
        Some(&run.decoder),
        &splits.test,
        Source::Decoder,
        per_image,
    )?;
    let cam = train::evaluate(classifier, None, &splits.test, Source::Cam, per_image)?;
    let report = RunReport {
        seed: cfg.seed,
        supervised,
        epochs: run
            .epochs
            .iter()
            .map(|e| EpochRow {
                epoch: e.epoch,
                mean_loss: e.mean_loss,
                valid_pxap: e.valid_pxap,
            })
            .collect(),
        selected_epoch: run.selected_epoch,
        test_pxap: dec.pxap,
        test_cam_pxap: cam.pxap,
        test_accuracy: dec.accuracy,
        checkpoints: paths,
    };
    write_text(&cfg.out_dir.join(REPORT_FILE), &report.to_toml())?;
    Ok((run, report))
}

/// Trains one decoder per learning rate and records the validation PxAP of
/// its selected epoch in `lr_grid.csv`. Nothing else is written.
pub fn run_lr_grid(
    cfg: &RunConfig,
    classifier: &Classifier,
    splits: &Splits,
    supervised: bool,
    lrs: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if lrs.is_empty() {
        return Err(Error::Precondition("learning-rate grid is empty".into()));
    }
    let full = if supervised {
        Some(load_split(
            &prepare_dataset(cfg)?,
            Split::Train,
            MaskPolicy::FullSupervision,
        )?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(lrs.len());
    let mut csv = String::from("lr,valid_pxap\n");
    for &lr in lrs {
        let mut c = cfg.clone();
        c.decoder.lr = lr;
        let run = match &full {
            Some(t) => train::train_decoder_supervised(&c, classifier, t, &splits.valid_labeled)?,
            None => train::train_decoder(&c, classifier, &splits.train, &splits.valid_labeled)?,
        };
        let pxap = train::select_model(&run.checkpoints)?.valid_pxap;
        writeln!(csv, "{lr},{pxap}").unwrap();
        rows.push((lr, pxap));
    }
    write_text(&cfg.out_dir.join(LR_GRID_FILE), &csv)?;
    Ok(rows)
}

/// Learning rate with the highest validation PxAP; the first listed wins ties.
pub fn best_lr(rows: &[(f64, f64)]) -> Option<f64> {
    rows.iter()
        .copied()
        .reduce(|best, r| if r.1 > best.1 { r } else { best })
        .map(|(lr, _)| lr)
}

/// Evaluates on the test split and writes `eval_<source>.csv` (the PR
/// curve) and `eval_<source>_summary.csv`.
pub fn run_evaluate(
    cfg: &RunConfig,
    classifier: &Classifier,
    decoder: Option<&Decoder>,
    splits: &Splits,
    source: Source,
) -> Result<Evaluation> {
    let ev = train::evaluate(
        classifier,
        decoder,
        &splits.test,
        source,
        cfg.eval.per_image_mean,
    )?;
    write_text(
        &cfg.out_dir.join(format!("eval_{source}.csv")),
        &ev.report.to_csv(),
    )?;
    let mut summary = String::from("seed,source,pxap,classification_accuracy\n");
    writeln!(
        summary,
        "{},{},{},{}",
        cfg.seed, source, ev.pxap, ev.accuracy
    )
    .unwrap();
    write_text(
        &cfg.out_dir.join(format!("eval_{source}_summary.csv")),
        &summary,
    )?;
    Ok(ev)
}

/// Writes `viz/<image_id>.ppm` panels (image, map, mask) for the test split.
pub fn run_viz(
    cfg: &RunConfig,
    classifier: &Classifier,
    decoder: Option<&Decoder>,
    splits: &Splits,
    source: Source,
) -> Result<Vec<PathBuf>> {
    let maps = train::score_maps(classifier, decoder, &splits.test, source)?;
    let dir = cfg.out_dir.join("viz");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut paths = Vec::with_capacity(maps.len());
    for (map, s) in maps.iter().zip(&splits.test) {
        let bytes = super::viz::panel_ppm(&s.image, map, s.mask().ok())?;
        let path = dir.join(format!("{:05}_{source}.ppm", s.image_id));
        crate::data::netpbm::save(&path, &bytes)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Evidence that training would draw at `epoch`, one record per training image.
pub fn run_dump_evidence(
    cfg: &RunConfig,
    classifier: &Classifier,
    splits: &Splits,
    epoch: usize,
) -> Result<String> {
    let mut out = String::new();
    for s in &splits.train {
        let cam = classifier.compute_cam(&s.image, s.label)?;
        let ev = train::evidence_for(cfg, s.image_id, epoch, &cam)?;
        out.push_str(&ev.record(s.image_id, epoch as u64));
        out.push('\n');
    }
    write_text(
        &cfg.out_dir.join(format!("evidence_epoch{epoch:03}.tsv")),
        &out,
    )?;
    Ok(out)
}
