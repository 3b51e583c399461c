//! `negev` command-line driver. Every output goes under `--out`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use negev::data::Profile;
use negev::pipeline::{self, run, AblationAxis, RunConfig, Source, Splits};

#[derive(Parser)]
#[command(
    name = "negev",
    version,
    about = "Weakly supervised localization with CAM evidence and fully negative samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// glas_like or cam16_like.
    #[arg(long)]
    profile: Option<Profile>,
    /// Background term as -log(1 - S0).
    #[arg(long)]
    paper_literal_loss: bool,
}

#[derive(Args, Clone)]
struct LrGrid {
    /// Decoder learning rates to try first; the one with the best validation
    /// PxAP is used for the final run.
    #[arg(long, value_delimiter = ',')]
    lr_grid: Vec<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(Common),
    /// Train the classifier.
    TrainCls(Common),
    /// Train the decoder on CAM evidence (needs a trained classifier).
    TrainDec {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: LrGrid,
    },
    /// Train the decoder on the true masks (reference).
    TrainSup {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: LrGrid,
    },
    /// Evaluate PxAP and classification accuracy on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// cam or decoder.
        #[arg(long, default_value = "decoder")]
        source: Source,
    },
    /// Sweep one knob of the decoder objective.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// loss_terms, sampling_mode, n or lambda.
        #[arg(long)]
        axis: AblationAxis,
        /// Values to sweep; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Write heatmap panels of the test split.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "decoder")]
        source: Source,
    },
    /// Print the evidence training would sample at an epoch.
    DumpEvidence {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        epoch: usize,
    },
}

fn resolve(common: &Common) -> negev::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(profile) = common.profile {
        cfg.data.profile = profile;
    }
    if common.paper_literal_loss {
        cfg.loss.paper_literal_loss = true;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| negev::Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    let used = cfg.out_dir.join("config.toml");
    std::fs::write(&used, cfg.to_toml()).map_err(|e| negev::Error::Io {
        path: used,
        source: e,
    })?;
    Ok(cfg)
}

fn splits(cfg: &RunConfig) -> negev::Result<Splits> {
    Splits::load(&run::prepare_dataset(cfg)?)
}

fn execute(command: Command) -> negev::Result<()> {
    match command {
        Command::GenData(common) => {
            let cfg = resolve(&common)?;
            let index = run::prepare_dataset(&cfg)?;
            println!(
                "{} records in {}",
                index.records().len(),
                index.path().display()
            );
        }
        Command::TrainCls(common) => {
            let cfg = resolve(&common)?;
            let r = run::run_train_classifier(&cfg, &splits(&cfg)?)?;
            let best = &r.epochs[r.best_epoch - 1];
            println!(
                "epoch {} kept: valid accuracy {:.2}, train accuracy {:.2}",
                r.best_epoch, best.valid_accuracy, best.train_accuracy
            );
        }
        Command::TrainDec { common, grid } => train_decoder(&common, &grid, false)?,
        Command::TrainSup { common, grid } => train_decoder(&common, &grid, true)?,
        Command::Eval { common, source } => {
            let cfg = resolve(&common)?;
            let classifier = run::load_classifier(&cfg)?;
            let decoder = match source {
                Source::Decoder => Some(run::load_decoder(&cfg)?),
                Source::Cam => None,
            };
            let ev =
                run::run_evaluate(&cfg, &classifier, decoder.as_ref(), &splits(&cfg)?, source)?;
            println!(
                "source={source} pxap={:.4} accuracy={:.2}",
                ev.pxap, ev.accuracy
            );
        }
        Command::Ablate {
            common,
            axis,
            values,
        } => {
            let cfg = resolve(&common)?;
            let classifier = run::load_classifier(&cfg)?;
            let values = if values.is_empty() {
                axis.default_values()
            } else {
                values
            };
            let table = pipeline::run_ablation(&cfg, &classifier, &splits(&cfg)?, axis, &values)?;
            let csv = table.to_csv();
            let path = cfg.out_dir.join(format!("ablation_{axis}.csv"));
            std::fs::write(&path, &csv).map_err(|e| negev::Error::Io { path, source: e })?;
            print!("{csv}");
        }
        Command::Viz { common, source } => {
            let cfg = resolve(&common)?;
            let classifier = run::load_classifier(&cfg)?;
            let decoder = match source {
                Source::Decoder => Some(run::load_decoder(&cfg)?),
                Source::Cam => None,
            };
            let paths = run::run_viz(&cfg, &classifier, decoder.as_ref(), &splits(&cfg)?, source)?;
            println!(
                "{} panels in {}",
                paths.len(),
                cfg.out_dir.join("viz").display()
            );
        }
        Command::DumpEvidence { common, epoch } => {
            let cfg = resolve(&common)?;
            let classifier = run::load_classifier(&cfg)?;
            print!(
                "{}",
                run::run_dump_evidence(&cfg, &classifier, &splits(&cfg)?, epoch)?
            );
        }
    }
    Ok(())
}

fn train_decoder(common: &Common, grid: &LrGrid, supervised: bool) -> negev::Result<()> {
    let mut cfg = resolve(common)?;
    let classifier = run::load_classifier(&cfg)?;
    let splits = splits(&cfg)?;
    if !grid.lr_grid.is_empty() {
        let rows = run::run_lr_grid(&cfg, &classifier, &splits, supervised, &grid.lr_grid)?;
        for (lr, pxap) in &rows {
            println!("lr {lr}: valid pxap {pxap:.4}");
        }
        cfg.decoder.lr = run::best_lr(&rows).expect("grid is not empty");
        println!("using lr {}", cfg.decoder.lr);
        let used = cfg.out_dir.join("config.toml");
        std::fs::write(&used, cfg.to_toml()).map_err(|e| negev::Error::Io {
            path: used,
            source: e,
        })?;
    }
    let (_, report) = run::run_train_decoder(&cfg, &classifier, &splits, supervised)?;
    println!(
        "selected epoch {}: test pxap {:.4} (cam {:.4}), accuracy {:.2}",
        report.selected_epoch, report.test_pxap, report.test_cam_pxap, report.test_accuracy
    );
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
