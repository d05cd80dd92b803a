//! `ferroscope`: file-based pipeline from synthetic or real steel images to
//! anomaly maps. Every stage reads and writes documented formats only.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] ferroscope::Error),
}

impl CliError {
    /// 1 usage, 2 data or format, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use ferroscope::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::NonFinite(_) | E::DegenerateCalibration(_)) => 3,
            CliError::Data(_) | CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ferroscope", version, about = "Steel surface anomaly detection pipeline")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Order {
    MostAnomalous,
    MostNormal,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labelled synthetic corpus (and optional raw strips).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        normal: Option<usize>,
        /// Tiles for each of the four defect classes.
        #[arg(long)]
        per_defect: Option<usize>,
        #[arg(long)]
        background: Option<usize>,
        #[arg(long)]
        strips: Option<usize>,
        #[arg(long)]
        strip_cols: Option<usize>,
    },
    /// Cut raw images (a PNG or a directory of PNGs) into unit tiles.
    Tile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the tile classifier on a labelled corpus.
    TrainCls {
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint path; the report and confusion matrix go alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train generator and discriminator on the normal tiles of a corpus.
    TrainGan {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory for generator.fsck, discriminator.fsck and the report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Discriminator feature vectors of a tile set, as FVEC1.
    Features {
        #[arg(long)]
        discriminator: PathBuf,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only tiles of this class (labelled corpora only).
        #[arg(long)]
        class: Option<String>,
    },
    /// Fit and calibrate the one-class SVM on a feature file.
    FitSvm {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a feature file: tile_id,raw_v,eq1,norm.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Calibrate against these features instead of the stored extremes.
        #[arg(long)]
        recalibrate: bool,
    },
    /// Heatmap and overlay PNGs per raw image.
    Map {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        discriminator: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid of the most anomalous (or most normal) scored tiles.
    Montage {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "most-anomalous")]
        order: Order,
    },
    /// Histogram of raw decision values (PNG plus CSV).
    Hist {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confusion matrix of a classifier over a labelled corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command, &cli.overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
