//! Layer-wise relevance propagation for small convolutional networks, made
//! Bayesian through MC-dropout weight sampling.
//!
//! The pipeline: train or load a [`Network`], trace a forward pass
//! ([`forward`]), propagate relevance back to the input ([`explain`]), repeat
//! under sampled dropout masks to obtain a [`RelevanceDistribution`], then
//! read off pixel-wise percentile heatmaps and sign-stability masks. Pixel
//! flipping ([`flip`]) scores how well a heatmap ranks pixels.

pub mod bayes;
pub mod data;
pub mod error;
pub mod export;
pub mod flip;
pub mod lrp;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use bayes::{
    percentile, percentiles, sample_relevances, sign_stability, summarize, McDropout,
    PercentileHeatmap, RelevanceDistribution, SignStabilityMap, Stability, WeightSampler,
};
pub use data::PixelStats;
pub use error::{Error, Result};
pub use flip::{
    aggregate_curves, curve_auc, flip_order, run_pixel_flipping, AggregateCurve, FlipCurve,
    PerturbationSpec, ScoreMode,
};
pub use lrp::{cmp_config, explain, explain_layers, RelevanceMap, Rule, RuleConfig};
pub use network::{
    build_lenet_mnist, forward, load_model, predict, predict_batch, save_model, DropoutMode,
    ForwardTrace, Layer, Network, NetworkBuilder,
};
pub use tensor::{conv2d, matmul, maxpool2d, ArgmaxIndices, Tensor};
pub use viz::{
    medical_transform, minmax_normalize, read_image, render_heatmap, seismic_colormap,
    write_image, ImageFormat, RenderedHeatmap, RgbImage,
};
pub use trainer::{
    cross_entropy_loss, evaluate_accuracy, input_gradient, train, Dataset, TrainConfig,
    TrainReport,
};
