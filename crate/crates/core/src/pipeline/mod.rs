//! The two-phase protocol: train and freeze the classifier, train the decoder
//! on sampled evidence with early stopping on pixel-labelled validation
//! PxAP, evaluate. Plus ablation sweeps and heatmaps.

pub mod ablation;
mod config;
pub mod run;
mod train;
pub mod viz;

pub use ablation::{run_ablation, AblationAxis, AblationRow, AblationTable, AblationValue};
pub use config::{DataConfig, EvalOptions, RunConfig, TrainHypers};
pub use run::{RunReport, Splits};
pub use train::{
    accuracy_on, evaluate, evidence_for, score_maps, select_model, train_classifier, train_decoder,
    train_decoder_supervised, ClassifierEpoch, ClassifierRun, DecoderRun, EpochCheckpoint,
    EpochRecord, Evaluation, Source, StepRecord,
};
pub use viz::{emit_heatmap, heatmap_ppm, COLORMAP};
