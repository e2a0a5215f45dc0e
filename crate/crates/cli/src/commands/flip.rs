use std::collections::BTreeMap;
use std::fmt::Write as _;

use blrp::data::PixelStats;
use blrp::flip::{aggregate_curves, curve_auc, run_pixel_flipping, AggregateCurve, FlipCurve, PerturbationSpec, ScoreMode};
use blrp::lrp::RuleConfig;
use blrp::rng::{self, Stream};
use blrp::{Network, Tensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::FlipArgs;
use crate::commands::explain::{explain_image, image_sample_seed};
use crate::error::{CliError, CliResult};
use crate::layout::{blrp_method, load_all, write_file, write_json, Layout};

/// Settings shared by every image of a flipping campaign.
pub struct FlipSetup<'a> {
    pub net: &'a Network,
    pub stats: &'a PixelStats,
    pub rules: &'a RuleConfig,
    pub samples: usize,
    pub alphas: &'a [f64],
    pub seed: u64,
    pub fraction: f64,
    pub score: ScoreMode,
}

/// Seed of the perturbation draws for test image `index`; shared by all
/// methods so they see the same fill values.
pub fn image_perturbation_seed(seed: u64, index: usize) -> u64 {
    rng::derive(rng::stream_seed(seed, Stream::Perturbation), index as u64)
}

pub fn method_names(alphas: &[f64]) -> Vec<String> {
    std::iter::once("lrp".to_string())
        .chain(alphas.iter().map(|&a| blrp_method(a)))
        .collect()
}

/// Curves of one image, one per method (`lrp`, then each percentile).
pub fn flip_image(setup: &FlipSetup, index: usize, x: &Tensor, label: usize) -> CliResult<Vec<FlipCurve>> {
    let e = explain_image(
        setup.net,
        x,
        label,
        setup.rules,
        setup.samples,
        setup.alphas,
        image_sample_seed(setup.seed, index),
    )?;
    let mean = Tensor::new(setup.stats.shape.clone(), setup.stats.mean.clone())?;
    let std = Tensor::new(setup.stats.shape.clone(), setup.stats.std.clone())?;
    let pert = PerturbationSpec::new(mean, std, image_perturbation_seed(setup.seed, index))?;
    let lrp = e.lrp.pixel_map();
    std::iter::once(&lrp)
        .chain(e.percentiles.iter().map(|(_, m)| m))
        .map(|map| Ok(run_pixel_flipping(setup.net, x, label, map, &pert, setup.fraction, setup.score)?))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct FlipSummary {
    pub score: ScoreMode,
    pub normalize: bool,
    pub images: usize,
    pub samples: usize,
    pub fraction: f64,
    pub auc_fraction: f64,
    /// Area under each method's mean curve over `[0, auc_fraction]`.
    pub auc: BTreeMap<String, f64>,
    pub image_ids: Vec<usize>,
}

pub struct FlipOutcome {
    pub methods: Vec<String>,
    pub aggregates: Vec<AggregateCurve>,
    pub summary: FlipSummary,
    /// `curves[image][method]`.
    pub curves: Vec<Vec<FlipCurve>>,
}

pub fn cmd_flip(args: &FlipArgs) -> CliResult<FlipOutcome> {
    args.sampling.validate()?;
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(CliError::usage(format!("--fraction {} outside (0, 1]", args.fraction)));
    }
    if !(0.0..=args.fraction).contains(&args.auc_fraction) {
        return Err(CliError::usage(format!(
            "--auc-fraction {} outside [0, --fraction]",
            args.auc_fraction
        )));
    }
    if args.images == 0 {
        return Err(CliError::usage("--images must be at least 1"));
    }
    let loaded = load_all(&args.model.model, &args.model.test_images, &args.model.test_labels)?;
    let rules = args.rule.config(&loaded.net)?;
    let setup = FlipSetup {
        net: &loaded.net,
        stats: &loaded.stats,
        rules: &rules,
        samples: args.sampling.samples,
        alphas: &args.sampling.alphas,
        seed: args.sampling.seed,
        fraction: args.fraction,
        score: args.score.into(),
    };
    let ids = rng::select_indices(args.sampling.seed, loaded.data.len(), args.images);
    log::info!("flipping {} images", ids.len());
    let curves = ids
        .par_iter()
        .map(|&i| flip_image(&setup, i, &loaded.data.image(i), loaded.data.labels()[i]))
        .collect::<CliResult<Vec<_>>>()?;
    let outcome = summarize(args, ids, curves)?;

    let layout = Layout::new(&args.out);
    let curves_dir = layout.curves();
    write_file(&curves_dir.join("flip_images.csv"), images_csv(&outcome))?;
    write_file(&curves_dir.join("flip_aggregate.csv"), aggregate_csv(&outcome))?;
    write_json(&curves_dir.join("flip_summary.json"), &outcome.summary)?;
    write_json(&layout.root.join("flip_config.json"), args)?;
    Ok(outcome)
}

fn summarize(args: &FlipArgs, ids: Vec<usize>, curves: Vec<Vec<FlipCurve>>) -> CliResult<FlipOutcome> {
    let methods = method_names(&args.sampling.alphas);
    let pixels = curves[0][0].pixel_count;
    let mut aggregates = Vec::new();
    let mut auc = BTreeMap::new();
    for (k, name) in methods.iter().enumerate() {
        let scores: Vec<Vec<f64>> = curves.iter().map(|c| c[k].scores.clone()).collect();
        let agg = aggregate_curves(&scores, args.normalize)?;
        auc.insert(name.clone(), curve_auc(&agg.mean, pixels, args.auc_fraction)?);
        aggregates.push(agg);
    }
    Ok(FlipOutcome {
        summary: FlipSummary {
            score: args.score.into(),
            normalize: args.normalize,
            images: ids.len(),
            samples: args.sampling.samples,
            fraction: args.fraction,
            auc_fraction: args.auc_fraction,
            auc,
            image_ids: ids,
        },
        methods,
        aggregates,
        curves,
    })
}

fn images_csv(o: &FlipOutcome) -> String {
    let mut s = String::from("image_id,method,step,fraction,score\n");
    for (id, curves) in o.summary.image_ids.iter().zip(&o.curves) {
        for (method, c) in o.methods.iter().zip(curves) {
            for (t, v) in c.scores.iter().enumerate() {
                writeln!(s, "{id},{method},{t},{},{v}", c.fraction(t)).unwrap();
            }
        }
    }
    s
}

fn aggregate_csv(o: &FlipOutcome) -> String {
    let pixels = o.curves[0][0].pixel_count as f64;
    let mut s = String::from("method,step,fraction,mean,stderr,count\n");
    for (method, a) in o.methods.iter().zip(&o.aggregates) {
        for (t, (m, se)) in a.mean.iter().zip(&a.stderr).enumerate() {
            writeln!(s, "{method},{t},{},{m},{se},{}", t as f64 / pixels, a.count).unwrap();
        }
    }
    s
}
