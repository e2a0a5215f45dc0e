use std::path::{Path, PathBuf};

use blrp::bayes::{percentiles, sample_relevances, sign_stability, RelevanceDistribution};
use blrp::export::{save_distribution, save_relevance_map, MapSidecar};
use blrp::lrp::{explain, RelevanceMap, RuleConfig};
use blrp::viz::{render_grayscale, render_heatmap, write_image, ImageFormat};
use blrp::{forward, rng, DropoutMode, Network, Tensor};
use rayon::prelude::*;

use crate::args::ExplainArgs;
use crate::error::{CliError, CliResult};
use crate::layout::{blrp_method, ensure_dir, load_all, write_json, Layout};

/// Standard LRP plus B-LRP percentile maps of one image.
pub struct Explanation {
    pub lrp: RelevanceMap,
    /// `(alpha, map)`, maps channel-summed to `H×W`.
    pub percentiles: Vec<(f64, Tensor)>,
    pub distribution: RelevanceDistribution,
}

/// Seed of the MC-dropout samples for test image `index`.
pub fn image_sample_seed(seed: u64, index: usize) -> u64 {
    rng::derive(seed, index as u64)
}

pub fn explain_image(
    net: &Network,
    x: &Tensor,
    class: usize,
    cfg: &RuleConfig,
    samples: usize,
    alphas: &[f64],
    seed: u64,
) -> CliResult<Explanation> {
    let trace = forward(net, x, DropoutMode::Off)?;
    let lrp = explain(net, &trace, class, cfg)?;
    let distribution = sample_relevances(net, x, class, cfg, samples, seed)?;
    let percentiles = percentiles(&distribution, alphas)?
        .into_iter()
        .map(|p| (p.alpha, p.values))
        .collect();
    Ok(Explanation {
        lrp,
        percentiles,
        distribution,
    })
}

pub struct ExplainOutcome {
    /// Per explained image: its map directory and rendered files.
    pub images: Vec<(usize, PathBuf, Vec<PathBuf>)>,
}

fn sidecar(cfg: &RuleConfig, method: &str, alpha: Option<f64>, samples: Option<usize>, index: usize) -> MapSidecar {
    MapSidecar {
        format: String::new(),
        dtype: String::new(),
        data: String::new(),
        shape: vec![],
        class_index: 0,
        rule: cfg.describe(),
        method: method.into(),
        alpha,
        samples,
        image_id: Some(index),
    }
}

fn render(map: &Tensor, medical: bool, path: &Path, format: ImageFormat) -> CliResult<PathBuf> {
    write_image(&render_heatmap(map, medical)?, path, format)?;
    Ok(path.to_path_buf())
}

pub fn cmd_explain(args: &ExplainArgs) -> CliResult<ExplainOutcome> {
    args.sampling.validate()?;
    let &[lo, hi] = args.stability.as_slice() else {
        return Err(CliError::usage("--stability takes two percentiles, e.g. 5,95"));
    };
    if !(0.0 <= lo && lo < hi && hi <= 100.0) {
        return Err(CliError::usage(format!("invalid stability interval {lo},{hi}")));
    }
    let loaded = load_all(&args.model.model, &args.model.test_images, &args.model.test_labels)?;
    let net = &loaded.net;
    let cfg = args.rule.config(net)?;
    let k = net.class_count();
    if let Some(c) = args.class.filter(|&c| c >= k) {
        return Err(CliError::usage(format!("--class {c} outside 0..{k}")));
    }
    if let Some(&i) = args.index.iter().find(|&&i| i >= loaded.data.len()) {
        return Err(CliError::usage(format!("--index {i} outside the {} test images", loaded.data.len())));
    }

    let layout = Layout::new(&args.out);
    let format: ImageFormat = args.format.into();
    let ext = format.extension();
    let results = args
        .index
        .par_iter()
        .map(|&index| {
            let x = loaded.data.image(index);
            let class = args.class.unwrap_or(loaded.data.labels()[index]);
            let seed = image_sample_seed(args.sampling.seed, index);
            let e = explain_image(net, &x, class, &cfg, args.sampling.samples, &args.sampling.alphas, seed)?;
            let stability = sign_stability(&e.distribution, lo, hi)?;
            Ok((index, x, e, stability))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut images = Vec::new();
    let m = Some(args.sampling.samples);
    for (index, x, e, stability) in results {
        let maps = Layout::image_dir(&layout.maps(), index);
        let renders = Layout::image_dir(&layout.renders(), index);
        ensure_dir(&maps)?;
        ensure_dir(&renders)?;
        let mut files = Vec::new();
        save_relevance_map(&e.lrp, maps.join("lrp"), &sidecar(&cfg, "lrp", None, None, index))?;
        write_image(&render_grayscale(&x)?, renders.join(format!("input.{ext}")), format)?;
        files.push(renders.join(format!("input.{ext}")));
        files.push(render(&e.lrp.values, args.medical, &renders.join(format!("lrp.{ext}")), format)?);
        for (alpha, map) in &e.percentiles {
            let method = blrp_method(*alpha);
            let rm = RelevanceMap::new(map.clone(), e.lrp.class_index)?;
            save_relevance_map(&rm, maps.join(&method), &sidecar(&cfg, "blrp", Some(*alpha), m, index))?;
            files.push(render(map, args.medical, &renders.join(format!("{method}.{ext}")), format)?);
        }
        let st = RelevanceMap::new(stability.to_tensor(), e.lrp.class_index)?;
        save_relevance_map(&st, maps.join("stability"), &sidecar(&cfg, "stability", None, m, index))?;
        // labels are already in {−1, 0, 1}; no transform
        files.push(render(&st.values, false, &renders.join(format!("stability.{ext}")), format)?);
        if args.save_distribution {
            save_distribution(&e.distribution, maps.join("distribution"), &cfg.describe(), Some(index))?;
        }
        if let Some(w) = &e.distribution.warning {
            log::warn!("image {index}: {w}");
        }
        images.push((index, maps, files));
    }
    write_json(&layout.root.join("explain_config.json"), args)?;
    Ok(ExplainOutcome { images })
}
