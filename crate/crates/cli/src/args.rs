use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;

/// Refractive-error regression on synthetic fundus images: data generation,
/// training, statistical evaluation, and attention atlases.
#[derive(Parser)]
#[command(name = "dioptra", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (images + manifest).
    Generate(GenerateArgs),
    /// Train one ensemble per requested target.
    Train(TrainArgs),
    /// Evaluate an ensemble and write report.json + predictions.csv.
    Evaluate(EvaluateArgs),
    /// Export per-image attention heatmaps and optional aggregate atlas.
    Attend(AttendArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output directory for images/ and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub n_train: usize,
    /// Tune-image count; omitted, tune patients are carved out of the
    /// training pool per cohort (10% biobank-like, 11% areds-like).
    #[arg(long)]
    pub n_tune: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub n_val: usize,
    /// Side length of generated images, minimum 32.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of deliberately unusable images, to exercise the quality filter.
    #[arg(long, default_value_t = 0.0)]
    pub corrupt_fraction: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and training logs.
    #[arg(long)]
    pub out: PathBuf,
    /// se | sphere | cylinder | all (separate model per target).
    #[arg(long, default_value = "se")]
    pub target: String,
    /// Optional key=value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_delta: Option<f64>,
    /// Ensemble member count.
    #[arg(long)]
    pub ensemble: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub resolution: Option<usize>,
}

impl TrainArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            ensemble_size: self.ensemble,
            seed: self.seed,
            input_resolution: self.resolution,
        }
    }
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory containing model_<target>_<k>.ckpt files.
    #[arg(long)]
    pub checkpoints: PathBuf,
    #[arg(long, default_value = "se")]
    pub target: String,
    #[arg(long, default_value = "validation")]
    pub split: String,
    /// Output directory for report.json and predictions.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated error margins in diopters.
    #[arg(long, default_value = "0.5,1,2")]
    pub margins: String,
    /// Bootstrap resample count.
    #[arg(long, default_value_t = 2000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Slice predicate (repeatable): all | no_amd | no_cataract_surgery |
    /// no_amd_no_cataract_surgery.
    #[arg(long)]
    pub slice: Vec<String>,
}

#[derive(Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// A single member checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "validation")]
    pub split: String,
    /// Output directory for heatmaps (and atlas/ when aggregating).
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict per-image output to one manifest image_path.
    #[arg(long)]
    pub image: Option<String>,
    /// Also write the (eye x band) mean-map atlas over the whole split.
    #[arg(long)]
    pub aggregate: bool,
    /// Minimum maps per (eye, band) group for the atlas.
    #[arg(long, default_value_t = 100)]
    pub min_count: usize,
}
