//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! MNIST is read from `$BLRP_MNIST_DIR` (default `<workspace>/data/mnist`).
//! Trained models are cached under `$BLRP_CACHE_DIR` (default
//! `target/tmp/acceptance`) and retrained when missing or when their recorded
//! recipe differs. `BLRP_ACCEPTANCE=2,3` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use blrp::bayes::{percentile, percentiles, sample_relevances, McDropout, RelevanceDistribution, WeightSampler};
use blrp::flip::{aggregate_curves, curve_auc, flip_order, run_pixel_flipping, PerturbationSpec, ScoreMode};
use blrp::lrp::{channel_sum, explain, explain_layers, RelevanceMap, Rule, RuleConfig};
use blrp::viz::{decode_ppm, encode_ppm, medical_transform, medical_transform_f64, minmax_normalize, read_image, render_heatmap, write_image, ImageFormat};
use blrp::{evaluate_accuracy, forward, input_gradient, rng, DropoutMode, Layer, Network, NetworkBuilder, Tensor};
use blrp_cli::args::{ExplainArgs, FlipArgs, Format, ModelArgs, RuleArgs, RuleName, SamplingArgs, ScoreArg, TrainArgs};
use blrp_cli::commands::explain::{explain_image, image_sample_seed};
use blrp_cli::commands::flip::image_perturbation_seed;
use blrp_cli::commands::{cmd_explain, cmd_flip, cmd_train};
use blrp_cli::layout::load_all;
use rand::Rng;
use rayon::prelude::*;

// tolerances and sizes
const FULL_ACCURACY: f64 = 0.985;
const SMOKE_ACCURACY: f64 = 0.970;
const CONSERVATION_NETS: usize = 200;
const CONSERVATION_RTOL: f64 = 1e-4;
const GXI_NETS: usize = 100;
const GXI_ANALYTIC_TOL: f64 = 1e-5;
const GXI_FD_TOL: f64 = 1e-3;
const GXI_FD_STEP: f64 = 1e-3;
const PERCENTILE_CASES: usize = 1000;
const PERCENTILE_MAX_M: usize = 12;
const PERCENTILE_TOL: f64 = 1e-6;
const FLIP_IMAGES: usize = 200;
const FLIP_SAMPLES: usize = 100;
const FLIP_AUC_FRACTION: f64 = 0.12;
const FLIP_MAX_FRACTION: f64 = 0.2;
const SPEARMAN_IMAGES: usize = 100;
const SPEARMAN_MIN: f64 = 0.7;
const DROPOUT_DRAWS: usize = 10_000;
const DROPOUT_SIGMAS: f64 = 3.0;
const VIZ_MAPS: usize = 1000;
const ROOT_SEED: u64 = 0;

type Check = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("BLRP_MNIST_DIR").map(PathBuf::from).unwrap_or_else(|| workspace().join("data/mnist"))
}

fn cache_dir() -> PathBuf {
    std::env::var_os("BLRP_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

/// `train-images-idx3-ubyte` or `train-images.idx3-ubyte`, optionally with `.gz` stripped.
fn mnist_file(stem: &str, kind: &str) -> Result<PathBuf, String> {
    let dir = mnist_dir();
    for name in [format!("{stem}-{kind}"), format!("{}.{}", stem, kind.trim_start_matches('-'))] {
        let p = dir.join(&name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(format!("MNIST file {stem}-{kind} not found in {} (set BLRP_MNIST_DIR)", dir.display()))
}

struct Mnist {
    train_images: PathBuf,
    train_labels: PathBuf,
    test_images: PathBuf,
    test_labels: PathBuf,
}

fn mnist() -> Result<Mnist, String> {
    Ok(Mnist {
        train_images: mnist_file("train-images", "idx3-ubyte")?,
        train_labels: mnist_file("train-labels", "idx1-ubyte")?,
        test_images: mnist_file("t10k-images", "idx3-ubyte")?,
        test_labels: mnist_file("t10k-labels", "idx1-ubyte")?,
    })
}

fn recipe_args(data: &Mnist, epochs: usize, out: PathBuf) -> TrainArgs {
    TrainArgs {
        train_images: data.train_images.clone(),
        train_labels: data.train_labels.clone(),
        test_images: Some(data.test_images.clone()),
        test_labels: Some(data.test_labels.clone()),
        train_limit: 50_000,
        epochs,
        lr: 0.001,
        momentum: 0.9,
        batch_size: 32,
        dropout: 0.5,
        seed: ROOT_SEED,
        out,
    }
}

const RECIPE_KEYS: [&str; 7] = ["train_limit", "epochs", "lr", "momentum", "batch_size", "dropout", "seed"];

fn recipe_of(v: &serde_json::Value) -> Vec<String> {
    RECIPE_KEYS.iter().map(|k| v[k].to_string()).collect()
}

/// Model trained with the default recipe for `epochs`, from cache when the
/// cached run recorded the same recipe.
fn cached_model(data: &Mnist, epochs: usize) -> Result<PathBuf, String> {
    let out = cache_dir().join(format!("lenet_e{epochs}_seed{ROOT_SEED}"));
    let args = recipe_args(data, epochs, out.clone());
    // through text, as written to disk, so f32 fields compare equal
    let want = recipe_of(&serde_json::from_str(&serde_json::to_string(&args).unwrap()).unwrap());
    let model = out.join("models/model.json");
    let recorded = fs::read_to_string(out.join("train_config.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .map(|v| recipe_of(&v));
    if recorded.as_ref() == Some(&want) && model.exists() {
        return Ok(model);
    }
    println!("      training {epochs}-epoch model into {} ...", out.display());
    let t = Instant::now();
    cmd_train(&args).map_err(|e| e.to_string())?;
    println!("      trained in {:.0}s", t.elapsed().as_secs_f64());
    Ok(model)
}

fn test_accuracy(data: &Mnist, model: &Path) -> Result<f64, String> {
    let l = load_all(model, &data.test_images, &data.test_labels).map_err(|e| e.to_string())?;
    evaluate_accuracy(&l.net, &l.data).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 1

fn c1_training() -> Check {
    let data = mnist()?;
    let smoke = test_accuracy(&data, &cached_model(&data, 5)?)?;
    let full = test_accuracy(&data, &cached_model(&data, 50)?)?;
    let msg = format!(
        "50 epochs: test accuracy {full:.4} (>= {FULL_ACCURACY}); 5 epochs: {smoke:.4} (>= {SMOKE_ACCURACY})"
    );
    if full >= FULL_ACCURACY && smoke >= SMOKE_ACCURACY {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- shared random nets

fn without_bias(net: Network) -> Network {
    let layers = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Dense { weight, .. } => Layer::Dense {
                weight: weight.clone(),
                bias: Tensor::zeros(&[weight.shape()[0]]),
            },
            Layer::Conv2d { weight, stride, padding, .. } => Layer::Conv2d {
                weight: weight.clone(),
                bias: Tensor::zeros(&[weight.shape()[0]]),
                stride: *stride,
                padding: *padding,
            },
            other => other.clone(),
        })
        .collect();
    Network::new(net.input_shape().to_vec(), layers).unwrap()
}

/// Bias-free ReLU network with at most five layers besides reshapes:
/// either a dense stack or conv → relu → maxpool → dense.
fn random_net(case: u64) -> Network {
    let mut r = rng::rng_from_seed(case);
    let net = if case % 2 == 0 {
        let input = r.random_range(2..12usize);
        let mut b = NetworkBuilder::new(&[input], case).dense(r.random_range(2..10));
        let hidden = r.random_range(0..=2usize);
        for _ in 0..hidden {
            b = b.relu().dense(r.random_range(2..10));
        }
        b.build().unwrap()
    } else {
        let c = r.random_range(1..=2usize);
        let hw = r.random_range(6..=9usize);
        NetworkBuilder::new(&[c, hw, hw], case)
            .conv2d(r.random_range(1..=3), 3, 1, r.random_range(0..=1))
            .relu()
            .maxpool(2, 2)
            .flatten()
            .dense(r.random_range(2..6))
            .build()
            .unwrap()
    };
    without_bias(net)
}

fn random_input(net: &Network, seed: u64) -> Tensor {
    let mut r = rng::rng_from_seed(seed ^ 0x5eed);
    Tensor::from_fn(net.input_shape(), |_| r.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- 2

fn c2_conservation() -> Check {
    let zero = RuleConfig::uniform(Rule::Zero);
    let mut worst = 0.0f64;
    let mut boundaries = 0;
    let mut net_sum_misses = 0;
    for case in 0..CONSERVATION_NETS as u64 {
        let net = random_net(case);
        let x = random_input(&net, case);
        let trace = forward(&net, &x, DropoutMode::Off).unwrap();
        let class = (case as usize) % net.class_count();
        let rel = explain_layers(&net, &trace, class, &zero).map_err(|e| format!("net {case}: {e}"))?;
        let top = rel.last().unwrap().sum();
        for (l, r) in rel.iter().enumerate() {
            // float sums err in proportion to the absolute mass, not the net sum
            let mass: f64 = r.data().iter().map(|&v| v.abs() as f64).sum();
            let err = (r.sum() - top).abs() / top.abs().max(mass).max(1e-12);
            boundaries += 1;
            if (r.sum() - top).abs() > CONSERVATION_RTOL * top.abs() {
                net_sum_misses += 1;
            }
            if !(err <= CONSERVATION_RTOL) {
                return Err(format!("net {case}, boundary {l}: sum {} vs output {top} (relative {err:e})", r.sum()));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "{CONSERVATION_NETS} bias-free nets, {boundaries} boundaries, worst deviation {worst:.2e} of the relevance mass \
         (<= {CONSERVATION_RTOL:e}); {net_sum_misses} boundaries exceed it against the net sum alone (cancellation)"
    ))
}

// ---------------------------------------------------------------- 3

/// Independent f64 forward pass, returning the logits and the activation
/// pattern (ReLU on/off and pooling winners) that fixes the linear region.
fn forward_f64(net: &Network, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut shape = net.input_shape().to_vec();
    let mut a = x.to_vec();
    let mut pattern = Vec::new();
    for layer in net.layers() {
        match layer {
            Layer::Dense { weight, bias } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                let w = weight.data();
                a = (0..o)
                    .map(|r| bias.data()[r] as f64 + (0..i).map(|c| w[r * i + c] as f64 * a[c]).sum::<f64>())
                    .collect();
                shape = vec![o];
            }
            Layer::Conv2d { weight, bias, stride, padding } => {
                let ws = weight.shape();
                let (co, ci, k) = (ws[0], ws[1], ws[2]);
                let (h, w) = (shape[1] as isize, shape[2] as isize);
                let (p, s) = (*padding as isize, *stride as isize);
                let oh = ((h + 2 * p - k as isize) / s + 1) as usize;
                let ow = ((w + 2 * p - k as isize) / s + 1) as usize;
                let mut out = vec![0.0; co * oh * ow];
                for o in 0..co {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = bias.data()[o] as f64;
                            for c in 0..ci {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = y as isize * s + ky as isize - p;
                                        let ix = xx as isize * s + kx as isize - p;
                                        if iy >= 0 && ix >= 0 && iy < h && ix < w {
                                            let wv = weight.data()[((o * ci + c) * k + ky) * k + kx] as f64;
                                            acc += wv * a[(c * h as usize + iy as usize) * w as usize + ix as usize];
                                        }
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + xx] = acc;
                        }
                    }
                }
                a = out;
                shape = vec![co, oh, ow];
            }
            Layer::Relu => {
                for v in a.iter_mut() {
                    pattern.push((*v > 0.0) as usize);
                    *v = v.max(0.0);
                }
            }
            Layer::MaxPool2d { kernel, stride } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut best = (f64::NEG_INFINITY, 0);
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let i = (ch * h + y * stride + ky) * w + xx * stride + kx;
                                    if a[i] > best.0 {
                                        best = (a[i], i);
                                    }
                                }
                            }
                            pattern.push(best.1);
                            out[(ch * oh + y) * ow + xx] = best.0;
                        }
                    }
                }
                a = out;
                shape = vec![c, oh, ow];
            }
            Layer::Flatten => shape = vec![a.len()],
            Layer::Dropout { .. } => {}
        }
    }
    (a, pattern)
}

fn c3_gradient_times_input() -> Check {
    let zero = RuleConfig::uniform(Rule::Zero);
    let (mut worst_an, mut worst_fd) = (0.0f64, 0.0f64);
    let (mut checked, mut kinks) = (0usize, 0usize);
    for case in 0..GXI_NETS as u64 {
        let net = random_net(1000 + case);
        let x = random_input(&net, 1000 + case);
        let class = (case as usize) % net.class_count();
        let trace = forward(&net, &x, DropoutMode::Off).unwrap();
        let rel = explain(&net, &trace, class, &zero).map_err(|e| e.to_string())?;
        let grad = input_gradient(&net, &x, class).map_err(|e| e.to_string())?;
        let scale = rel.values.data().iter().fold(1.0f64, |m, &v| m.max(v.abs() as f64));
        let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let (_, base) = forward_f64(&net, &xs);
        for i in 0..x.len() {
            let r = rel.values.data()[i] as f64;
            let an = xs[i] * grad.data()[i] as f64;
            let d = (r - an).abs() / scale;
            worst_an = worst_an.max(d);
            if !(d <= GXI_ANALYTIC_TOL) {
                return Err(format!("net {case}, input {i}: LRP-0 {r} vs x*grad {an}"));
            }
            let mut plus = xs.clone();
            plus[i] += GXI_FD_STEP;
            let mut minus = xs.clone();
            minus[i] -= GXI_FD_STEP;
            let (fp, pp) = forward_f64(&net, &plus);
            let (fm, pm) = forward_f64(&net, &minus);
            if pp != base || pm != base {
                // the step crosses a ReLU or pooling boundary: not differentiable there
                kinks += 1;
                continue;
            }
            checked += 1;
            let fd = xs[i] * (fp[class] - fm[class]) / (2.0 * GXI_FD_STEP);
            let d = (r - fd).abs() / scale;
            worst_fd = worst_fd.max(d);
            if !(d <= GXI_FD_TOL) {
                return Err(format!("net {case}, input {i}: LRP-0 {r} vs x*finite difference {fd}"));
            }
        }
    }
    if kinks * 20 > checked {
        return Err(format!("too many coordinates at activation boundaries: {kinks} of {}", checked + kinks));
    }
    Ok(format!(
        "{GXI_NETS} bias-free ReLU nets: max |R - x*grad| {worst_an:.1e} (<= {GXI_ANALYTIC_TOL:e}), \
         vs central differences {worst_fd:.1e} (<= {GXI_FD_TOL:e}) over {checked} coordinates ({kinks} at kinks skipped)"
    ))
}

// ---------------------------------------------------------------- 4

/// Brute force without sorting: the k-th order statistic is the value with
/// fewer than k+1 values strictly below and at least k+1 at or below it.
fn order_statistic(v: &[f32], k: usize) -> f64 {
    for &c in v {
        let below = v.iter().filter(|&&o| o < c).count();
        let at_or_below = v.iter().filter(|&&o| o <= c).count();
        if below <= k && k < at_or_below {
            return c as f64;
        }
    }
    unreachable!()
}

fn brute_percentile(v: &[f32], alpha: f64) -> f64 {
    let h = alpha / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (h.floor(), h.ceil());
    let a = order_statistic(v, lo as usize);
    let b = order_statistic(v, hi as usize);
    a + (h - lo) * (b - a)
}

fn distribution(columns: &[Vec<f32>]) -> RelevanceDistribution {
    let m = columns[0].len();
    let maps = (0..m)
        .map(|s| {
            let values = columns.iter().map(|c| c[s]).collect::<Vec<_>>();
            RelevanceMap::new(Tensor::new(vec![values.len()], values).unwrap(), 0).unwrap()
        })
        .collect();
    RelevanceDistribution::new(maps, vec![0; m]).unwrap()
}

fn c4_percentiles() -> Check {
    // frozen from numpy.percentile(method="linear")
    let frozen: [(&[f32], f64, f64); 6] = [
        (&[3.0, -1.0, 7.5, 2.0, 0.0, -4.25, 9.0], 5.0, -3.275),
        (&[3.0, -1.0, 7.5, 2.0, 0.0, -4.25, 9.0], 95.0, 8.55),
        (&[3.0, -1.0, 7.5, 2.0, 0.0, -4.25, 9.0], 33.3, -0.002),
        (&[0.5, 0.25], 5.0, 0.2625),
        (&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.], 25.0, 3.75),
        (&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.], 95.0, 11.45),
    ];
    for (v, alpha, want) in frozen {
        let got = percentile(&distribution(&[v.to_vec()]), alpha).unwrap().values.data()[0] as f64;
        if (got - want).abs() > PERCENTILE_TOL * want.abs().max(1.0) {
            return Err(format!("reference value: P{alpha} of {v:?} = {got}, expected {want}"));
        }
    }

    let mut r = rng::rng_from_seed(4);
    let mut worst = 0.0f64;
    let mut pixels = 0;
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5).collect();
    for case in 0..PERCENTILE_CASES {
        let m = r.random_range(1..=PERCENTILE_MAX_M);
        let p = r.random_range(1..=16usize);
        let coarse = case % 3 == 0;
        let cols: Vec<Vec<f32>> = (0..p)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if coarse {
                            r.random_range(-3i32..=3) as f32 * 0.5
                        } else {
                            r.random_range(-10.0f32..10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let dist = distribution(&cols);
        let mut alphas: Vec<f64> = (0..8).map(|_| r.random_range(0.0..=100.0)).collect();
        alphas.extend([0.0, 5.0, 25.0, 50.0, 75.0, 95.0, 100.0]);
        let maps = percentiles(&dist, &alphas).unwrap();
        for (alpha, map) in alphas.iter().zip(&maps) {
            for (px, col) in cols.iter().enumerate() {
                let got = map.values.data()[px] as f64;
                let want = brute_percentile(col, *alpha);
                let d = (got - want).abs() / want.abs().max(1.0);
                worst = worst.max(d);
                if !(d <= PERCENTILE_TOL) {
                    return Err(format!("case {case}, pixel {px}, alpha {alpha}: {got} vs brute force {want}"));
                }
            }
        }
        let lo = percentile(&dist, 0.0).unwrap();
        let hi = percentile(&dist, 100.0).unwrap();
        for (px, col) in cols.iter().enumerate() {
            let min = col.iter().copied().fold(f32::INFINITY, f32::min);
            let max = col.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if lo.values.data()[px].to_bits() != min.to_bits() || hi.values.data()[px].to_bits() != max.to_bits() {
                return Err(format!("case {case}, pixel {px}: P0/P100 differ from min/max"));
            }
        }
        let sweep = percentiles(&dist, &grid).unwrap();
        for px in 0..p {
            if sweep.windows(2).any(|w| w[1].values.data()[px] < w[0].values.data()[px]) {
                return Err(format!("case {case}, pixel {px}: percentile decreases in alpha"));
            }
        }
        pixels += p;
    }
    Ok(format!(
        "{PERCENTILE_CASES} distributions (M <= {PERCENTILE_MAX_M}, {pixels} pixels): worst deviation {worst:.1e} \
         (<= {PERCENTILE_TOL:e}); P0/P100 exact; monotone over 201 alphas"
    ))
}

// ---------------------------------------------------------------- 5 and 6

struct MnistRun {
    auc_lrp: f64,
    auc_p05: f64,
    wins: usize,
    spearman: Vec<f64>,
    images: usize,
    secs: f64,
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f32]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f32], b: &[f32]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn mnist_run() -> Result<MnistRun, String> {
    let data = mnist()?;
    let model = cached_model(&data, 50)?;
    let l = load_all(&model, &data.test_images, &data.test_labels).map_err(|e| e.to_string())?;
    let cfg = RuleConfig::uniform(Rule::Epsilon(1e-9));
    let mean = Tensor::new(l.stats.shape.clone(), l.stats.mean.clone()).unwrap();
    let std = Tensor::new(l.stats.shape.clone(), l.stats.std.clone()).unwrap();
    let ids = rng::select_indices(ROOT_SEED, l.data.len(), FLIP_IMAGES);
    let t = Instant::now();
    let per_image = ids
        .par_iter()
        .map(|&id| {
            let x = l.data.image(id);
            let label = l.data.labels()[id];
            let e = explain_image(&l.net, &x, label, &cfg, FLIP_SAMPLES, &[5.0, 50.0], image_sample_seed(ROOT_SEED, id))
                .map_err(|e| e.to_string())?;
            let pert = PerturbationSpec::new(mean.clone(), std.clone(), image_perturbation_seed(ROOT_SEED, id)).unwrap();
            let lrp = e.lrp.pixel_map();
            let flip = |m: &Tensor| {
                run_pixel_flipping(&l.net, &x, label, m, &pert, FLIP_MAX_FRACTION, ScoreMode::Logit).map_err(|e| e.to_string())
            };
            let c_lrp = flip(&lrp)?.scores;
            let c_p05 = flip(&e.percentiles[0].1)?.scores;
            let rho = spearman(e.percentiles[1].1.data(), lrp.data());
            Ok((c_lrp, c_p05, rho))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let pixels = l.data.sample_shape()[1] * l.data.sample_shape()[2];
    let lrp: Vec<Vec<f64>> = per_image.iter().map(|p| p.0.clone()).collect();
    let p05: Vec<Vec<f64>> = per_image.iter().map(|p| p.1.clone()).collect();
    let auc = |c: &[Vec<f64>]| curve_auc(&aggregate_curves(c, false).unwrap().mean, pixels, FLIP_AUC_FRACTION).unwrap();
    let wins = lrp
        .iter()
        .zip(&p05)
        .filter(|(a, b)| {
            curve_auc(b, pixels, FLIP_AUC_FRACTION).unwrap() <= curve_auc(a, pixels, FLIP_AUC_FRACTION).unwrap()
        })
        .count();
    Ok(MnistRun {
        auc_lrp: auc(&lrp),
        auc_p05: auc(&p05),
        wins,
        spearman: per_image.iter().take(SPEARMAN_IMAGES).map(|p| p.2).collect(),
        images: ids.len(),
        secs: t.elapsed().as_secs_f64(),
    })
}

fn c5_flipping(run: &Result<MnistRun, String>) -> Check {
    let run = run.as_ref().map_err(|e| e.clone())?;
    let msg = format!(
        "{} images, M={FLIP_SAMPLES}, logit score: AUC[0,{FLIP_AUC_FRACTION}] B-LRP-5 {:.5} vs LRP {:.5} \
         (B-LRP-5 lower on {} images; {:.0}s)",
        run.images, run.auc_p05, run.auc_lrp, run.wins, run.secs
    );
    if run.auc_p05 <= run.auc_lrp {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_spearman(run: &Result<MnistRun, String>) -> Check {
    let run = run.as_ref().map_err(|e| e.clone())?;
    let n = run.spearman.len() as f64;
    let mean = run.spearman.iter().sum::<f64>() / n;
    let min = run.spearman.iter().copied().fold(f64::INFINITY, f64::min);
    let msg = format!(
        "mean Spearman(B-LRP-50, LRP) over {} images {mean:.4} (>= {SPEARMAN_MIN}), minimum {min:.4}",
        run.spearman.len()
    );
    if mean >= SPEARMAN_MIN {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 7

fn c7_dropout() -> Check {
    let width = 256;
    let mut parts = Vec::new();
    for p in [0.1f32, 0.5, 0.8] {
        let net = NetworkBuilder::new(&[8], 7).dense(width).relu().dropout(p).dense(3).build().unwrap();
        let x = Tensor::full(&[8], 0.5);
        let sampler = McDropout { seed: 11 };
        let mut kept = 0usize;
        let mut unit0 = 0usize;
        for m in 0..DROPOUT_DRAWS {
            let trace = sampler.trace(&net, &x, m).unwrap();
            let mask = trace.dropout_mask(2).unwrap();
            kept += mask.iter().filter(|&&k| k).count();
            unit0 += mask[0] as usize;
        }
        let q = 1.0 - p as f64;
        let check = |count: usize, n: usize, what: &str| -> Result<f64, String> {
            let freq = count as f64 / n as f64;
            let se = (q * (1.0 - q) / n as f64).sqrt();
            let z = (freq - q) / se;
            if z.abs() <= DROPOUT_SIGMAS {
                Ok(z)
            } else {
                Err(format!("p={p}: {what} keep frequency {freq:.5} is {z:.2} SE from {q}"))
            }
        };
        let z_all = check(kept, DROPOUT_DRAWS * width, "pooled")?;
        let z_one = check(unit0, DROPOUT_DRAWS, "unit 0")?;
        parts.push(format!("p={p}: z {z_all:+.2} pooled, {z_one:+.2} single unit"));
    }

    // p = 0 collapses to standard LRP bit for bit
    let net = NetworkBuilder::new(&[1, 8, 8], 3)
        .conv2d(4, 3, 1, 1)
        .relu()
        .maxpool(2, 2)
        .flatten()
        .dense(16)
        .relu()
        .dropout(0.0)
        .dense(4)
        .build()
        .unwrap();
    let x = random_input(&net, 77);
    let cfg = RuleConfig::uniform(Rule::Epsilon(1e-9));
    let standard = explain(&net, &forward(&net, &x, DropoutMode::Off).unwrap(), 2, &cfg).unwrap();
    let dist = sample_relevances(&net, &x, 2, &cfg, 16, 5).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if dist.samples.iter().any(|s| bits(&s.values) != bits(&standard.values)) {
        return Err("p=0: a sample differs from standard LRP".into());
    }
    let summed = channel_sum(&standard.values);
    for p in percentiles(&dist, &[5.0, 50.0, 95.0]).unwrap() {
        if bits(&p.values) != bits(&summed) {
            return Err(format!("p=0: percentile {} differs from standard LRP", p.alpha));
        }
    }
    if dist.warning.is_none() {
        return Err("p=0: no point-mass warning".into());
    }
    Ok(format!(
        "{DROPOUT_DRAWS} draws x {width} units, within {DROPOUT_SIGMAS} SE ({}); p=0 reproduces standard LRP bit-exactly",
        parts.join("; ")
    ))
}

// ---------------------------------------------------------------- 8

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c8_determinism() -> Check {
    let data = mnist()?;
    let model = cached_model(&data, 5)?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model_args = ModelArgs {
        model,
        test_images: data.test_images.clone(),
        test_labels: data.test_labels.clone(),
    };
    let rule = RuleArgs {
        rule: RuleName::Epsilon,
        epsilon: 1e-9,
        gamma: 0.25,
    };
    let sampling = SamplingArgs {
        samples: 30,
        alphas: vec![5.0, 25.0, 50.0, 75.0, 95.0],
        seed: 42,
    };
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        cmd_explain(&ExplainArgs {
            model: model_args.clone(),
            index: vec![0, 1, 2, 3],
            class: None,
            rule: rule.clone(),
            sampling: sampling.clone(),
            stability: vec![5.0, 95.0],
            medical: false,
            format: Format::Png,
            save_distribution: true,
            out: out.clone(),
        })
        .map_err(|e| e.to_string())?;
        cmd_flip(&FlipArgs {
            model: model_args.clone(),
            images: 6,
            rule: rule.clone(),
            sampling: sampling.clone(),
            fraction: 0.2,
            score: ScoreArg::Logit,
            normalize: false,
            auc_fraction: 0.12,
            out: out.clone(),
        })
        .map_err(|e| e.to_string())?;
        trees.push(tree(&out));
    }
    let (a, b) = (&trees[0], &trees[1]);
    if a.keys().ne(b.keys()) {
        return Err("runs produced different file sets".into());
    }
    if let Some(k) = a.keys().find(|k| a[*k] != b[*k]) {
        return Err(format!("{} differs between runs", k.display()));
    }
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!("explain + flip twice with seed 42: {} files, {bytes} bytes, byte-identical", a.len()))
}

// ---------------------------------------------------------------- 9

fn c9_viz() -> Check {
    let mut r = rng::rng_from_seed(9);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for case in 0..VIZ_MAPS {
        let scale = 10f32.powi(r.random_range(-6..6));
        let values: Vec<f32> = (0..32 * 32)
            .map(|_| match r.random_range(0..10) {
                0 | 1 => 0.0,
                2 => r.random_range(-3i32..=3) as f32 * scale,
                _ => r.random_range(-1.0f32..1.0) * scale,
            })
            .collect();
        let map = Tensor::new(vec![32, 32], values.clone()).unwrap();
        let norm = minmax_normalize(&map);
        for (i, (&a, &b)) in values.iter().zip(norm.data()).enumerate() {
            if !(-1.0..=1.0).contains(&b) {
                return Err(format!("map {case}: normalized value {b} out of range"));
            }
            if (a > 0.0) != (b > 0.0) || (a < 0.0) != (b < 0.0) {
                return Err(format!("map {case}, pixel {i}: sign of {a} not preserved ({b})"));
            }
        }
        for positive in [true, false] {
            let idx: Vec<usize> = (0..values.len()).filter(|&i| (values[i] > 0.0) == positive && values[i] != 0.0).collect();
            let before: Vec<f32> = idx.iter().map(|&i| values[i]).collect();
            let after: Vec<f32> = idx.iter().map(|&i| norm.data()[i]).collect();
            // strict order may merge after division; compare weak order
            let o = flip_order(&before).unwrap();
            if o.windows(2).any(|w| after[w[0]] < after[w[1]]) {
                return Err(format!("map {case}: normalization reorders a sign class"));
            }
        }
        if flip_order(&values).unwrap() != flip_order(&medical_transform_f64(&values)).unwrap() {
            return Err(format!("map {case}: medical transform changes the ranking"));
        }
        let med = medical_transform(&map);
        let o = flip_order(&values).unwrap();
        if o.windows(2).any(|w| med.data()[w[0]] < med.data()[w[1]]) {
            return Err(format!("map {case}: rounded medical transform is not monotone"));
        }
        let img = render_heatmap(&map, case % 2 == 1).map_err(|e| e.to_string())?;
        if decode_ppm(&encode_ppm(&img)).map_err(|e| e.to_string())? != img {
            return Err(format!("map {case}: PPM round trip differs"));
        }
        if case % 50 == 0 {
            let p = tmp.path().join(format!("m{case}.ppm"));
            write_image(&img, &p, ImageFormat::Ppm).map_err(|e| e.to_string())?;
            if read_image(&p).map_err(|e| e.to_string())? != img {
                return Err(format!("map {case}: PPM file round trip differs"));
            }
            files += 1;
        }
    }
    Ok(format!(
        "{VIZ_MAPS} random 32x32 maps: minmax in [-1,1] with signs kept; medical transform keeps the ranking exactly; \
         PPM round trips bit-exact ({VIZ_MAPS} in memory, {files} via files)"
    ))
}

// ---------------------------------------------------------------- driver

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("BLRP_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wants = |id: u32| selected.as_ref().is_none_or(|s| s.contains(&id));
    println!("acceptance (MNIST: {}, cache: {})", mnist_dir().display(), cache_dir().display());

    let mut failed = 0;
    let mut report = |id: u32, name: &str, r: Check| {
        match &r {
            Ok(m) => println!("PASS [{id}] {name}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL [{id}] {name}: {m}");
            }
        }
    };
    let cheap: [(u32, &str, fn() -> Check); 6] = [
        (2, "conservation oracle", c2_conservation),
        (3, "gradient x input oracle", c3_gradient_times_input),
        (4, "percentile oracle", c4_percentiles),
        (7, "MC-dropout statistics", c7_dropout),
        (9, "visualization contracts", c9_viz),
        (1, "training reproduction", c1_training),
    ];
    for (id, name, f) in cheap {
        if wants(id) {
            report(id, name, guarded(f));
        }
    }
    if wants(5) || wants(6) {
        let run = guarded(mnist_run);
        if wants(5) {
            report(5, "pixel-flipping ordering", guarded(|| c5_flipping(&run)));
        }
        if wants(6) {
            report(6, "median vs standard similarity", guarded(|| c6_spearman(&run)));
        }
    }
    if wants(8) {
        report(8, "determinism", guarded(c8_determinism));
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
