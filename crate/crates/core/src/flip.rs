//! Pixel-flipping evaluation of heatmaps.
//!
//! Pixels are visited in descending relevance order; each visit replaces
//! the pixel (all channels at that spatial location) with
//! `(U − μ) / σ`, `U ~ Unif[0, 1]`, where `μ`, `σ` are the training-set
//! statistics of that pixel. Perturbations accumulate, and the class score
//! of the deterministic (dropout-off) network is recorded after every step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{predict_batch, Network};
use crate::rng;
use crate::tensor::Tensor;

/// What a flip curve records at each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Pre-softmax score of the true class.
    #[default]
    Logit,
    /// Softmax probability of the true class.
    Probability,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "logit" => Ok(ScoreMode::Logit),
            "probability" | "prob" => Ok(ScoreMode::Probability),
            other => Err(format!("unknown score mode {other:?} (logit|probability)")),
        }
    }
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Logit => "logit",
            ScoreMode::Probability => "probability",
        })
    }
}

/// Per-pixel training statistics and the seed of the uniform fill draws.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    /// `C × H × W` means.
    pub mean: Tensor,
    /// `C × H × W` standard deviations.
    pub std: Tensor,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(mean: Tensor, std: Tensor, seed: u64) -> Result<Self> {
        if mean.shape() != std.shape() || mean.ndim() != 3 {
            return Err(Error::dim(format!(
                "perturbation statistics must be matching C×H×W tensors, got {:?} and {:?}",
                mean.shape(),
                std.shape()
            )));
        }
        Ok(PerturbationSpec { mean, std, seed })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PerturbationSpec {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipCurve {
    /// `scores[0]` is the unperturbed score, `scores[t]` the score after `t`
    /// flips.
    pub scores: Vec<f64>,
    /// Spatial pixel indices in the order they were flipped.
    pub flipped_order: Vec<usize>,
    /// Number of spatial pixels in the image (the fraction denominator).
    pub pixel_count: usize,
}

impl FlipCurve {
    pub fn flips(&self) -> usize {
        self.scores.len() - 1
    }

    pub fn fraction(&self, step: usize) -> f64 {
        step as f64 / self.pixel_count as f64
    }
}

/// Stable descending order of relevance; ties keep ascending pixel index.
pub fn flip_order<T: Copy + Into<f64>>(relevance: &[T]) -> Result<Vec<usize>> {
    let r: Vec<f64> = relevance.iter().map(|&v| v.into()).collect();
    if let Some(i) = r.iter().position(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN relevance at pixel {i}")));
    }
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]));
    Ok(order)
}

/// Number of flips covering `max_fraction` of `pixels`.
pub fn flip_count(pixels: usize, max_fraction: f64) -> usize {
    // tolerate representation error in fractions such as 0.12 · 100
    ((pixels as f64 * max_fraction) + 1e-9).floor() as usize
}

fn score(logits: &[f32], class: usize, mode: ScoreMode) -> f64 {
    match mode {
        ScoreMode::Logit => logits[class] as f64,
        ScoreMode::Probability => {
            let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let z: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
            (logits[class] as f64 - max).exp() / z
        }
    }
}

/// Batch size for scoring the perturbed images.
const SCORE_BATCH: usize = 64;

/// Runs one flip curve. `relevance` is one value per spatial pixel
/// (`H × W`, or any tensor with `H·W` entries).
pub fn run_pixel_flipping(
    net: &Network,
    x: &Tensor,
    true_class: usize,
    relevance: &Tensor,
    pert: &PerturbationSpec,
    max_fraction: f64,
    mode: ScoreMode,
) -> Result<FlipCurve> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::dim(format!("pixel flipping needs a C×H×W image, got {:?}", x.shape())));
    };
    let pixels = h * w;
    if relevance.len() != pixels {
        return Err(Error::dim(format!(
            "relevance has {} entries for a {h}×{w} image",
            relevance.len()
        )));
    }
    if pert.mean.shape() != x.shape() {
        return Err(Error::dim(format!(
            "perturbation statistics {:?} do not match image {:?}",
            pert.mean.shape(),
            x.shape()
        )));
    }
    if !(max_fraction > 0.0 && max_fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "max_fraction {max_fraction} outside (0, 1]"
        )));
    }
    if true_class >= net.class_count() {
        return Err(Error::Index(format!(
            "class {true_class} outside 0..{}",
            net.class_count()
        )));
    }
    let order = flip_order(relevance.data())?;
    let flips = flip_count(pixels, max_fraction);
    let order: Vec<usize> = order.into_iter().take(flips).collect();

    let mut rng = rng::rng_from_seed(pert.seed);
    let mut current = x.clone();
    let mut states: Vec<f32> = Vec::with_capacity((flips + 1) * x.len());
    states.extend_from_slice(current.data());
    for &p in &order {
        for ch in 0..c {
            let i = ch * pixels + p;
            let sigma = pert.std.data()[i];
            if !(sigma > 0.0) {
                return Err(Error::Precondition(format!(
                    "perturbation sigma is {sigma} at channel {ch}, pixel {p}"
                )));
            }
            let u: f32 = rng.random();
            current.data_mut()[i] = (u - pert.mean.data()[i]) / sigma;
        }
        states.extend_from_slice(current.data());
    }

    let k = net.class_count();
    let mut scores = Vec::with_capacity(flips + 1);
    for chunk in states.chunks(SCORE_BATCH * x.len()) {
        let n = chunk.len() / x.len();
        let batch = Tensor::new(vec![n, c, h, w], chunk.to_vec())?;
        let logits = predict_batch(net, &batch)?;
        scores.extend(logits.data().chunks(k).map(|row| score(row, true_class, mode)));
    }
    Ok(FlipCurve {
        scores,
        flipped_order: order,
        pixel_count: pixels,
    })
}

/// Pointwise mean and standard error of equally long curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub count: usize,
}

/// With `normalize`, each curve is first divided by its initial score.
pub fn aggregate_curves(curves: &[Vec<f64>], normalize: bool) -> Result<AggregateCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Precondition("no curves to aggregate".into()))?;
    let len = first.len();
    if let Some(bad) = curves.iter().position(|c| c.len() != len) {
        return Err(Error::dim(format!(
            "curve {bad} has {} points, expected {len}",
            curves[bad].len()
        )));
    }
    let n = curves.len() as f64;
    let value = |c: &[f64], t: usize| if normalize { c[t] / c[0] } else { c[t] };
    let mut mean = vec![0.0; len];
    let mut stderr = vec![0.0; len];
    for t in 0..len {
        let mu = curves.iter().map(|c| value(c, t)).sum::<f64>() / n;
        mean[t] = mu;
        if curves.len() > 1 {
            let var = curves.iter().map(|c| (value(c, t) - mu).powi(2)).sum::<f64>() / (n - 1.0);
            stderr[t] = (var / n).sqrt();
        }
    }
    Ok(AggregateCurve {
        mean,
        stderr,
        count: curves.len(),
    })
}

/// Trapezoidal area under `scores` against the flipped fraction
/// (`step / pixel_count`), from 0 to `up_to_fraction`. Lower is better.
pub fn curve_auc(scores: &[f64], pixel_count: usize, up_to_fraction: f64) -> Result<f64> {
    let dx = 1.0 / pixel_count as f64;
    let span = (scores.len().saturating_sub(1)) as f64 * dx;
    if scores.is_empty() || up_to_fraction < 0.0 || up_to_fraction > span + 1e-12 {
        return Err(Error::Precondition(format!(
            "fraction {up_to_fraction} outside the curve range [0, {span}]"
        )));
    }
    let steps = up_to_fraction / dx;
    let whole = (steps + 1e-9).floor() as usize;
    let mut area = 0.0;
    for t in 0..whole.min(scores.len() - 1) {
        area += 0.5 * (scores[t] + scores[t + 1]) * dx;
    }
    let rest = steps - whole as f64;
    if rest > 1e-9 && whole + 1 < scores.len() {
        let end = scores[whole] + rest * (scores[whole + 1] - scores[whole]);
        area += 0.5 * (scores[whole] + end) * rest * dx;
    }
    Ok(area)
}
