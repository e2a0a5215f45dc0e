use std::path::PathBuf;

use blrp::flip::ScoreMode;
use blrp::lrp::{cmp_config_with, Rule, RuleConfig};
use blrp::viz::ImageFormat;
use blrp::Network;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug, Clone, Serialize)]
#[command(
    name = "blrp",
    version,
    args_override_self = true,
    about = "Bayesian layer-wise relevance propagation on MNIST-style data",
    long_about = "Train a LeNet-style network, explain its predictions with LRP and \
                  MC-dropout B-LRP percentile maps, score explanations by pixel flipping, \
                  and render the results.\n\n\
                  Outputs go below --out in a fixed layout: models/, maps/, curves/, renders/.\n\
                  Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure."
)]
pub struct Cli {
    /// Worker threads for B-LRP sampling and flipping; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
pub enum Command {
    /// Train the LeNet variant with SGD + momentum and write models/ and curves/train.csv
    Train(TrainArgs),
    /// Standard LRP, B-LRP percentile maps and a sign-stability mask for test images
    Explain(ExplainArgs),
    /// Pixel-flipping curves for standard LRP and B-LRP percentiles
    Flip(FlipArgs),
    /// Rasterize flip curves and heatmap grids
    Render(RenderArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    /// Training images (IDX, e.g. train-images-idx3-ubyte)
    #[arg(long)]
    pub train_images: PathBuf,
    /// Training labels (IDX)
    #[arg(long)]
    pub train_labels: PathBuf,
    /// Test images, evaluated after every epoch
    #[arg(long, requires = "test_labels")]
    pub test_images: Option<PathBuf>,
    /// Test labels
    #[arg(long, requires = "test_images")]
    pub test_labels: Option<PathBuf>,
    /// Use only the first N training images (the reference recipe trains on 50,000)
    #[arg(long, default_value_t = 50_000)]
    pub train_limit: usize,
    /// Epochs (reference recipe: 50)
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// SGD learning rate (reference recipe: 0.001)
    #[arg(long, default_value_t = 0.001)]
    pub lr: f32,
    /// SGD momentum (reference recipe: 0.9)
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    /// Mini-batch size (reference recipe: 32)
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Dropout rate of both dropout layers
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f32,
    /// Root seed for initialization, shuffling and training dropout
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (models/, maps/, curves/, renders/ are created below it)
    #[arg(long, short)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    Zero,
    Epsilon,
    Gamma,
    /// γ on convolutions, ε on dense layers, zero on the top layer
    Cmp,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RuleArgs {
    /// Propagation rule (MNIST reference: epsilon with ε = 1e-9)
    #[arg(long, value_enum, default_value_t = RuleName::Epsilon)]
    pub rule: RuleName,
    /// ε of the epsilon rule (MNIST reference: 1e-9)
    #[arg(long, default_value_t = 1e-9)]
    pub epsilon: f32,
    /// γ of the gamma rule (common default: 0.25)
    #[arg(long, default_value_t = 0.25)]
    pub gamma: f32,
}

impl RuleArgs {
    pub fn config(&self, net: &Network) -> CliResult<RuleConfig> {
        let cfg = match self.rule {
            RuleName::Zero => RuleConfig::uniform(Rule::Zero),
            RuleName::Epsilon => RuleConfig::uniform(Rule::Epsilon(self.epsilon)),
            RuleName::Gamma => RuleConfig::uniform(Rule::Gamma(self.gamma)),
            RuleName::Cmp => cmp_config_with(net, self.epsilon, self.gamma),
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// Model manifest written by `train` (models/model.json)
    #[arg(long)]
    pub model: PathBuf,
    /// Test images (IDX, e.g. t10k-images-idx3-ubyte)
    #[arg(long)]
    pub test_images: PathBuf,
    /// Test labels (IDX)
    #[arg(long)]
    pub test_labels: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SamplingArgs {
    /// MC-dropout samples M per image (reference: 100)
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// B-LRP percentiles to compute (reference: 5,25,50,75,95)
    #[arg(long, value_delimiter = ',', default_value = "5,25,50,75,95")]
    pub alphas: Vec<f64>,
    /// Root seed for dropout samples and perturbations
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SamplingArgs {
    pub fn validate(&self) -> CliResult<()> {
        if self.samples == 0 {
            return Err(CliError::usage("--samples must be at least 1"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=100.0).contains(*a)) {
            return Err(CliError::usage(format!("alpha {a} outside [0, 100]")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Png,
    Ppm,
}

impl From<Format> for ImageFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Png => ImageFormat::Png,
            Format::Ppm => ImageFormat::Ppm,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Test-set indices to explain
    #[arg(long, value_delimiter = ',', required = true)]
    pub index: Vec<usize>,
    /// Class to explain; defaults to each image's true label
    #[arg(long)]
    pub class: Option<usize>,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Lower and upper percentile of the sign-stability interval
    #[arg(long, value_delimiter = ',', default_value = "5,95")]
    pub stability: Vec<f64>,
    /// Render with the square-root magnitude transform
    #[arg(long)]
    pub medical: bool,
    /// Image format of renders
    #[arg(long, value_enum, default_value_t = Format::Png)]
    pub format: Format,
    /// Also write the full M-sample distribution per image
    #[arg(long)]
    pub save_distribution: bool,
    /// Output directory (models/, maps/, curves/, renders/ are created below it)
    #[arg(long, short)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FlipArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Random test images to evaluate (reference: 1000)
    #[arg(long, default_value_t = 1000)]
    pub images: usize,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Fraction of pixels to flip
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    /// Recorded score: pre-softmax logit or softmax probability of the true class
    #[arg(long, value_enum, default_value_t = ScoreArg::Logit)]
    pub score: ScoreArg,
    /// Divide each curve by its initial score before averaging
    #[arg(long)]
    pub normalize: bool,
    /// Fraction up to which the summary AUC is computed
    #[arg(long, default_value_t = 0.12)]
    pub auc_fraction: f64,
    /// Output directory (models/, maps/, curves/, renders/ are created below it)
    #[arg(long, short)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreArg {
    Logit,
    Probability,
}

impl From<ScoreArg> for ScoreMode {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Logit => ScoreMode::Logit,
            ScoreArg::Probability => ScoreMode::Probability,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RenderArgs {
    /// Aggregate flip CSV (curves/flip_aggregate.csv)
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Methods to plot; defaults to every method in the CSV
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Map directories written by `explain` (maps/img_NNNNN), one grid row each
    #[arg(long, value_delimiter = ',')]
    pub maps: Vec<PathBuf>,
    /// Render heatmaps with the square-root magnitude transform
    #[arg(long)]
    pub medical: bool,
    /// Pixels per map pixel in the grid
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, value_enum, default_value_t = Format::Png)]
    pub format: Format,
    /// Output directory (models/, maps/, curves/, renders/ are created below it)
    #[arg(long, short)]
    #[serde(skip)]
    pub out: PathBuf,
}
