use std::path::PathBuf;

use blrp::data::{load_mnist_train, load_mnist_with_stats};
use blrp::{build_lenet_mnist, save_model, train, TrainConfig, TrainReport};

use crate::args::TrainArgs;
use crate::error::{CliError, CliResult};
use crate::layout::{save_stats, write_file, write_json, Layout};

pub struct TrainOutcome {
    pub model: PathBuf,
    pub report: TrainReport,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainOutcome> {
    let cfg = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    if !(0.0..1.0).contains(&args.dropout) {
        return Err(CliError::usage(format!("--dropout {} outside [0, 1)", args.dropout)));
    }
    let split = load_mnist_train(&args.train_images, &args.train_labels, Some(args.train_limit))?;
    log::info!("training on {} images", split.data.len());
    let test = match (&args.test_images, &args.test_labels) {
        (Some(i), Some(l)) => Some(load_mnist_with_stats(i, l, &split.stats, None)?),
        _ => None,
    };
    let mut net = build_lenet_mnist(args.seed).with_dropout_rate(args.dropout)?;
    let report = train(&mut net, &split.data, test.as_ref(), &cfg, |e| match e.test_accuracy {
        Some(acc) => log::info!("epoch {:>3}  loss {:.5}  test accuracy {:.4}", e.epoch, e.mean_loss, acc),
        None => log::info!("epoch {:>3}  loss {:.5}", e.epoch, e.mean_loss),
    })?;

    let layout = Layout::new(&args.out);
    let model = layout.model();
    crate::layout::ensure_dir(&layout.models())?;
    save_model(&net, &model)?;
    save_stats(&model, &split.stats)?;
    write_file(&layout.curves().join("train.csv"), report.to_csv())?;
    write_json(&layout.root.join("train_config.json"), args)?;
    Ok(TrainOutcome { model, report })
}
