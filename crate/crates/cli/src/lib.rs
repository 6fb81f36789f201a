//! Command-line driver: synthetic data, measurement, statistics, training,
//! evaluation, latent-space analytics and the HTTP service.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;
pub mod config;
mod data;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub(crate) fn data(e: impl std::fmt::Display) -> Self {
        Self::Data(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "clayshape", version, about = "Tablet silhouette measurement, statistics, classifiers and VAE latent exploration")]
pub struct Cli {
    /// JSON file overriding the default run configuration
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Serialize)]
pub struct DataArgs {
    /// Catalog CSV (artifact_id,image_path,period,genre)
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Period taxonomy JSON replacing the built-in table
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Square model input size in pixels
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Split without stratifying by period
    #[arg(long)]
    pub unstratified: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupArg {
    Period,
    Genre,
    PeriodGenre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdaGroup {
    Period,
    Era,
    Genre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentClassifier {
    /// Boosted stumps fitted on encoder means of the train split
    Gbstumps,
    /// The VAE's own class head
    Head,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic tablet catalog: PNGs plus catalog.csv
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the largest silhouette component of every catalog image
    Measure {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Output CSV file, or a directory to hold measures.csv
        #[arg(long)]
        out: Option<PathBuf>,
        /// Square size images are letterboxed to before masking
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        blur_kernel: Option<usize>,
        #[arg(long)]
        blur_sigma: Option<f64>,
    },
    /// Ratio statistics, correlations and densities from a measures CSV
    Eda {
        #[arg(long)]
        measures: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "period")]
        group_by: EdaGroup,
        #[arg(long, default_value_t = 256)]
        grid_points: usize,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Train the four-stage CNN period classifier
    TrainCnn(TrainArgs),
    /// Train the VAE
    TrainVae(TrainArgs),
    /// Score a checkpoint on one split and write metrics.json
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Classifier used on VAE latents
        #[arg(long, value_enum, default_value = "gbstumps")]
        classifier: LatentClassifier,
        /// Test classes with fewer samples are reported as "Other (?)"; 0 disables
        #[arg(long)]
        min_count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latent-space analytics on a trained VAE
    Latent {
        #[command(subcommand)]
        command: LatentCommand,
    },
    /// Serve the HTTP API for a VAE checkpoint and catalog
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value = clayshape_service::DEFAULT_BIND)]
        bind: String,
    },
}

#[derive(Args, Debug, Serialize)]
pub struct LatentArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "period")]
    pub group_by: GroupArg,
}

#[derive(Subcommand, Debug)]
pub enum LatentCommand {
    /// Mean encoder output per group, with decoded mean tablets
    Means {
        #[command(flatten)]
        common: LatentArgs,
    },
    /// Decode points on the line between two group means
    Interpolate {
        #[command(flatten)]
        common: LatentArgs,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// Comma-separated fractions in [0, 1]
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
        /// Evenly spaced fractions 0, 1/n, ..., 1 (used when --t is absent)
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Set one latent entry and decode
    Knob {
        #[command(flatten)]
        common: LatentArgs,
        /// Comma-separated latent vector; otherwise the mean of --group
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z: Vec<f64>,
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        entry: usize,
        #[arg(long, allow_hyphen_values = true)]
        value: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = clayshape::latent::DEFAULT_KNOB_RANGE.0)]
        min: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = clayshape::latent::DEFAULT_KNOB_RANGE.1)]
        max: f64,
    },
    /// Hierarchical clustering of group means, or of a confusion matrix
    Cluster {
        #[command(flatten)]
        common: LatentArgs,
        #[arg(long, default_value = "average")]
        linkage: String,
        /// Also report a flat cut into this many clusters
        #[arg(long)]
        k: Option<usize>,
        /// metrics.json whose confusion matrix is clustered instead
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// One latent entry across all group means
    Entry {
        #[command(flatten)]
        common: LatentArgs,
        /// Entry index; all entries when absent
        #[arg(long)]
        entry: Option<usize>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            if let CliError::Usage(_) = e {
                eprintln!("usage error: {e}");
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    commands::dispatch(cli.command, cfg)
}
