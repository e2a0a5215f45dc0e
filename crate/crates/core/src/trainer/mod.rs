//! Supervised training with mini-batch SGD (classic momentum) on softmax
//! cross-entropy.

mod backprop;
mod loss;

pub use backprop::{input_gradient, Gradients};
pub use loss::cross_entropy_loss;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward_batch, predict_batch, Network};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// lr 0.001, momentum 0.9, batch 32, 50 epochs.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 32,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Precondition(format!(
                "learning rate {} must be a finite non-negative number",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Precondition(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Precondition(
                "batch size and epoch count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Images `N × C × H × W` with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> Tensor {
        self.images.sample(i)
    }

    /// Gathers the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Dataset { images, labels }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// `epoch,mean_loss,test_accuracy`, one row per epoch; the accuracy
    /// column is empty when no test split was given.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,test_accuracy\n");
        for e in &self.epochs {
            let acc = e.test_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(s, "{},{:.8},{}", e.epoch, e.mean_loss, acc).unwrap();
        }
        s
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_accuracy)
    }
}

/// Trains `net` in place. Each epoch visits the training set in a
/// seed-derived permutation; dropout is active in the training forward
/// passes. Updates are `v ← μv − η·g`, `w ← w + v`.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.sample_shape() != net.input_shape() {
        return Err(Error::dim(format!(
            "dataset samples {:?} do not match network input {:?}",
            data.sample_shape(),
            net.input_shape()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= net.class_count()) {
        return Err(Error::Index(format!(
            "label {bad} outside 0..{}",
            net.class_count()
        )));
    }
    let mut velocity: Vec<Option<(Vec<f32>, Vec<f32>)>> = net
        .layers()
        .iter()
        .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
        .collect();
    let mut dropout_rng = rng::substream(cfg.seed, Stream::TrainDropout, 0);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::substream(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = data.batch(idx);
            let trace = forward_batch(net, &x, Some(&mut dropout_rng))?;
            let (loss, grad_logits) = cross_entropy_loss(trace.acts.last().unwrap(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += loss;
            batches += 1;
            let grads = backprop::backward(net, &trace, &grad_logits, false)?;
            for ((layer, g), v) in net
                .layers_mut()
                .iter_mut()
                .zip(&grads.layers)
                .zip(&mut velocity)
            {
                let (Some((w, bias)), Some((gw, gb)), Some((vw, vb))) =
                    (layer.params_mut(), g, v.as_mut())
                else {
                    continue;
                };
                sgd_step(w.data_mut(), gw.data(), vw, cfg);
                sgd_step(bias.data_mut(), gb.data(), vb, cfg);
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / batches as f64,
            test_accuracy: test.map(|t| evaluate_accuracy(net, t)).transpose()?,
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}

fn sgd_step(w: &mut [f32], g: &[f32], v: &mut [f32], cfg: &TrainConfig) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = cfg.momentum * *v - cfg.learning_rate * g;
        *w += *v;
    }
}

/// Fraction of samples whose arg-max logit equals the label, dropout off.
pub fn evaluate_accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, labels) = data.batch(chunk);
        let logits = predict_batch(net, &x)?;
        let k = net.class_count();
        for (row, &label) in logits.data().chunks(k).zip(&labels) {
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
