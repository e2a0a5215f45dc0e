//! Relevance distributions under approximate posterior weight samples, and
//! the statistics read off them: pixel-wise percentile heatmaps,
//! sign-stability masks and moment summaries.
//!
//! Each posterior sample is a deterministic explanation of one weight draw.
//! With MC dropout a weight draw is a set of dropout keep masks, so sample
//! `m` is `explain(forward(x, SampleWithSeed(seed_m)))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::{channel_sum, explain, RelevanceMap, RuleConfig};
use crate::network::{forward, DropoutMode, ForwardTrace, Network};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Source of posterior weight samples, expressed as traced forward passes.
pub trait WeightSampler: Sync {
    /// Seed (or other identifier) that reproduces sample `m`.
    fn sample_seed(&self, m: usize) -> u64;

    fn trace(&self, net: &Network, x: &Tensor, m: usize) -> Result<ForwardTrace>;

    /// Whether the samples can differ at all for this network.
    fn is_degenerate(&self, net: &Network) -> bool;
}

/// MC dropout: dropout stays on at explanation time and every sample draws
/// fresh keep masks from its own substream of `seed`.
#[derive(Clone, Copy, Debug)]
pub struct McDropout {
    pub seed: u64,
}

impl WeightSampler for McDropout {
    fn sample_seed(&self, m: usize) -> u64 {
        rng::derive(rng::stream_seed(self.seed, Stream::DropoutSample), m as u64)
    }

    fn trace(&self, net: &Network, x: &Tensor, m: usize) -> Result<ForwardTrace> {
        forward(net, x, DropoutMode::SampleWithSeed(self.sample_seed(m)))
    }

    fn is_degenerate(&self, net: &Network) -> bool {
        net.dropout_rates().iter().all(|&p| p == 0.0)
    }
}

/// `M` relevance maps of one input, in sample order.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceDistribution {
    pub samples: Vec<RelevanceMap>,
    pub seeds: Vec<u64>,
    pub class_index: usize,
    /// Set when the posterior is a point mass (no active dropout), so all
    /// samples coincide.
    pub warning: Option<String>,
}

impl RelevanceDistribution {
    pub fn new(samples: Vec<RelevanceMap>, seeds: Vec<u64>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Precondition("relevance distribution needs M >= 1 samples".into()))?;
        if seeds.len() != samples.len() {
            return Err(Error::Precondition(format!(
                "{} seeds for {} samples",
                seeds.len(),
                samples.len()
            )));
        }
        for s in &samples {
            if s.values.shape() != first.values.shape() || s.class_index != first.class_index {
                return Err(Error::Precondition(
                    "samples must share shape and class index".into(),
                ));
            }
        }
        Ok(RelevanceDistribution {
            class_index: first.class_index,
            samples,
            seeds,
            warning: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Channel-summed per-pixel values of every sample.
    pub fn pixel_samples(&self) -> PixelSamples {
        let maps: Vec<Tensor> = self.samples.iter().map(|s| channel_sum(&s.values)).collect();
        PixelSamples::from_maps(&maps).expect("distribution is non-empty")
    }
}

/// Relevance samples for `x` under `M` MC-dropout weight draws.
///
/// Samples are evaluated in parallel on the current rayon pool; ordering is
/// by sample index.
pub fn sample_relevances(
    net: &Network,
    x: &Tensor,
    class_index: usize,
    cfg: &RuleConfig,
    samples: usize,
    seed: u64,
) -> Result<RelevanceDistribution> {
    sample_relevances_with(&McDropout { seed }, net, x, class_index, cfg, samples)
}

pub fn sample_relevances_with<S: WeightSampler>(
    sampler: &S,
    net: &Network,
    x: &Tensor,
    class_index: usize,
    cfg: &RuleConfig,
    samples: usize,
) -> Result<RelevanceDistribution> {
    if samples == 0 {
        return Err(Error::Precondition("M must be at least 1".into()));
    }
    if class_index >= net.class_count() {
        return Err(Error::Index(format!(
            "class {class_index} outside 0..{}",
            net.class_count()
        )));
    }
    let maps = (0..samples)
        .into_par_iter()
        .map(|m| {
            let trace = sampler.trace(net, x, m)?;
            explain(net, &trace, class_index, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds = (0..samples).map(|m| sampler.sample_seed(m)).collect();
    let mut dist = RelevanceDistribution::new(maps, seeds)?;
    if sampler.is_degenerate(net) {
        let msg = "network has no active dropout: the posterior is a point mass and all samples coincide".to_string();
        log::warn!("{msg}");
        dist.warning = Some(msg);
    }
    Ok(dist)
}

/// Per-pixel sample values, sorted ascending, for repeated percentile
/// queries.
#[derive(Clone, Debug)]
pub struct PixelSamples {
    shape: Vec<usize>,
    m: usize,
    /// Pixel-major: `sorted[p * m .. (p + 1) * m]`.
    sorted: Vec<f32>,
}

impl PixelSamples {
    pub fn from_maps(maps: &[Tensor]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Precondition("empty distribution".into()))?;
        let (m, n) = (maps.len(), first.len());
        let mut sorted = vec![0.0; m * n];
        for (s, map) in maps.iter().enumerate() {
            if map.shape() != first.shape() {
                return Err(Error::dim("sample maps differ in shape"));
            }
            for (p, &v) in map.data().iter().enumerate() {
                if v.is_nan() {
                    return Err(Error::Numeric(format!("NaN relevance in sample {s}, pixel {p}")));
                }
                sorted[p * m + s] = v;
            }
        }
        for col in sorted.chunks_mut(m) {
            col.sort_unstable_by(f32::total_cmp);
        }
        Ok(PixelSamples {
            shape: first.shape().to_vec(),
            m,
            sorted,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.m
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn column(&self, pixel: usize) -> &[f32] {
        &self.sorted[pixel * self.m..(pixel + 1) * self.m]
    }

    pub fn percentile(&self, alpha: f64) -> Result<PercentileHeatmap> {
        check_alpha(alpha)?;
        let data = self
            .sorted
            .chunks(self.m)
            .map(|col| interpolate_sorted(col, alpha))
            .collect();
        Ok(PercentileHeatmap {
            values: Tensor::new(self.shape.clone(), data)?,
            alpha,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&alpha) {
        return Err(Error::Precondition(format!("percentile {alpha} outside [0, 100]")));
    }
    Ok(())
}

/// Linear interpolation between closest ranks: rank `h = (M − 1)·α/100`
/// (0-based) between `sorted[floor h]` and `sorted[ceil h]`. Computed in
/// `f64` so the result is monotone in `α` and hits the sample values
/// exactly at integer ranks.
pub fn interpolate_sorted(sorted: &[f32], alpha: f64) -> f32 {
    let h = (sorted.len() - 1) as f64 * alpha / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return sorted[lo.min(sorted.len() - 1)];
    }
    let (a, b) = (sorted[lo] as f64, sorted[lo + 1] as f64);
    (a + frac * (b - a)) as f32
}

/// Pixel-wise `α`-th percentile of a relevance distribution (channel-summed
/// for image inputs).
#[derive(Clone, Debug, PartialEq)]
pub struct PercentileHeatmap {
    pub values: Tensor,
    pub alpha: f64,
}

pub fn percentile(dist: &RelevanceDistribution, alpha: f64) -> Result<PercentileHeatmap> {
    if dist.is_empty() {
        return Err(Error::Precondition("empty distribution".into()));
    }
    dist.pixel_samples().percentile(alpha)
}

/// All requested percentiles, sorting each pixel once.
pub fn percentiles(dist: &RelevanceDistribution, alphas: &[f64]) -> Result<Vec<PercentileHeatmap>> {
    let ps = dist.pixel_samples();
    alphas.iter().map(|&a| ps.percentile(a)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    CertainPositive,
    CertainNegative,
    Uncertain,
}

impl Stability {
    pub fn code(self) -> i8 {
        match self {
            Stability::CertainPositive => 1,
            Stability::CertainNegative => -1,
            Stability::Uncertain => 0,
        }
    }
}

/// Ternary per-pixel label from a credible interval
/// `[P_low, P_high]`: positive if `P_low > 0`, negative if `P_high < 0`,
/// otherwise the relevance crosses zero within the interval.
#[derive(Clone, Debug, PartialEq)]
pub struct SignStabilityMap {
    pub shape: Vec<usize>,
    pub labels: Vec<Stability>,
    pub alpha_low: f64,
    pub alpha_high: f64,
}

impl SignStabilityMap {
    pub fn count(&self, s: Stability) -> usize {
        self.labels.iter().filter(|&&l| l == s).count()
    }

    /// Labels as `+1 / 0 / −1` in a tensor shaped like the heatmaps.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.labels.iter().map(|l| l.code() as f32).collect(),
        )
        .expect("label count matches shape")
    }
}

pub fn sign_stability(
    dist: &RelevanceDistribution,
    alpha_low: f64,
    alpha_high: f64,
) -> Result<SignStabilityMap> {
    if !(alpha_low < alpha_high) {
        return Err(Error::Precondition(format!(
            "alpha_low {alpha_low} must be below alpha_high {alpha_high}"
        )));
    }
    let ps = dist.pixel_samples();
    let lo = ps.percentile(alpha_low)?;
    let hi = ps.percentile(alpha_high)?;
    let labels = lo
        .values
        .data()
        .iter()
        .zip(hi.values.data())
        .map(|(&l, &h)| {
            if l > 0.0 {
                Stability::CertainPositive
            } else if h < 0.0 {
                Stability::CertainNegative
            } else {
                Stability::Uncertain
            }
        })
        .collect();
    Ok(SignStabilityMap {
        shape: ps.shape().to_vec(),
        labels,
        alpha_low,
        alpha_high,
    })
}

/// Pixel-wise mean, sample standard deviation and median.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: Tensor,
    pub std: Tensor,
    pub median: Tensor,
}

pub fn summarize(dist: &RelevanceDistribution) -> Result<Summary> {
    let m = dist.len();
    if m < 2 {
        return Err(Error::Precondition(format!(
            "standard deviation needs at least 2 samples, got {m}"
        )));
    }
    let ps = dist.pixel_samples();
    let mut mean = Vec::with_capacity(ps.sorted.len() / m);
    let mut std = Vec::with_capacity(mean.capacity());
    for col in ps.sorted.chunks(m) {
        let mu = col.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
        let var = col.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / (m - 1) as f64;
        mean.push(mu as f32);
        std.push(var.sqrt() as f32);
    }
    Ok(Summary {
        mean: Tensor::new(ps.shape.clone(), mean)?,
        std: Tensor::new(ps.shape.clone(), std)?,
        median: ps.percentile(50.0)?.values,
    })
}
