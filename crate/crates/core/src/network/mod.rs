//! Layer stacks, the cached forward pass and MC-dropout masking.

mod io;

pub use io::{load_model, save_model, MODEL_FORMAT};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{
    conv_forward_cols, gemm, im2col, maxpool_into, ArgmaxIndices, ConvGeometry, MatRef,
    PoolGeometry, Tensor,
};

/// One layer of a feed-forward stack, together with its parameters.
///
/// Dense weights are stored `out × in`; convolution kernels
/// `C_out × C_in × k × k`.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense { weight: Tensor, bias: Tensor },
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d { kernel: usize, stride: usize },
    /// Dropout with drop probability `rate` in `[0, 1)`.
    Dropout { rate: f32 },
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Layer::Dense { .. })
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Layer::Conv2d { .. })
    }

    /// Weight and bias, for layers that have them.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    fn err(&self, index: usize, message: impl Into<String>) -> Error {
        Error::Layer {
            index,
            kind: self.kind(),
            message: message.into(),
        }
    }

    /// Output shape (without batch dimension) for a given input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, bias } => {
                let ws = weight.shape();
                if input.len() != 1 {
                    return Err(self.err(index, format!("expects flat input, got {input:?}")));
                }
                if ws.len() != 2 || ws[1] != input[0] || bias.shape() != [ws[0]] {
                    return Err(self.err(
                        index,
                        format!(
                            "weight {ws:?} / bias {:?} incompatible with input {input:?}",
                            bias.shape()
                        ),
                    ));
                }
                Ok(vec![ws[0]])
            }
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let ws = weight.shape();
                let &[c, h, w] = input else {
                    return Err(self.err(index, format!("expects C×H×W input, got {input:?}")));
                };
                if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] || bias.shape() != [ws[0]] {
                    return Err(self.err(
                        index,
                        format!(
                            "kernels {ws:?} / bias {:?} incompatible with input {input:?}",
                            bias.shape()
                        ),
                    ));
                }
                let g = ConvGeometry::new([c, h, w], ws[2], *stride, *padding)
                    .map_err(|e| self.err(index, e.to_string()))?;
                Ok(vec![ws[0], g.out_height(), g.out_width()])
            }
            Layer::MaxPool2d { kernel, stride } => {
                let &[c, h, w] = input else {
                    return Err(self.err(index, format!("expects C×H×W input, got {input:?}")));
                };
                let g = PoolGeometry::new([c, h, w], *kernel, *stride)
                    .map_err(|e| self.err(index, e.to_string()))?;
                Ok(vec![c, g.out_height(), g.out_width()])
            }
            Layer::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(self.err(index, format!("rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// A validated feed-forward network `f(·; W): R^d → R^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    /// `shapes[l]` is the input shape of layer `l`; the last entry is the
    /// output shape.
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Checks that consecutive layer shapes compose and that the stack ends
    /// in a flat vector of class scores.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::dim(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::dim("network needs at least one layer"));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(Error::dim(format!(
                "network must end in a flat class-score vector, got {:?}",
                shapes.last().unwrap()
            )));
        }
        Ok(Network {
            layers,
            input_shape,
            shapes,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    /// Input shape of layer `l` (`l == len` gives the output shape).
    pub fn shape_at(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout { .. }))
    }

    pub fn dropout_rates(&self) -> Vec<f32> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dropout { rate } => Some(*rate),
                _ => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Mutable parameter access for optimizers. Shapes must not change.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Copy of the network with every dropout rate replaced by `rate`.
    pub fn with_dropout_rate(&self, rate: f32) -> Result<Network> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dropout { .. } => Layer::Dropout { rate },
                other => other.clone(),
            })
            .collect();
        Network::new(self.input_shape.clone(), layers)
    }
}

/// Incrementally builds a network with uniform `±1/sqrt(fan_in)` initial
/// weights and biases.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    current: Vec<usize>,
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize], seed: u64) -> Self {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            current: input_shape.to_vec(),
            layers: Vec::new(),
            rng: rng::substream(seed, rng::Stream::Init, 0),
            error: None,
        }
    }

    fn push(mut self, layer: Layer) -> Self {
        if self.error.is_none() {
            match layer.output_shape(self.layers.len(), &self.current) {
                Ok(s) => {
                    self.current = s;
                    self.layers.push(layer);
                }
                Err(e) => self.error = Some(e),
            }
        }
        self
    }

    fn uniform(&mut self, shape: &[usize], bound: f32) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
    }

    pub fn dense(mut self, out_features: usize) -> Self {
        let fan_in: usize = self.current.iter().product();
        let bound = 1.0 / (fan_in as f32).sqrt();
        let weight = self.uniform(&[out_features, fan_in], bound);
        let bias = self.uniform(&[out_features], bound);
        self.push(Layer::Dense { weight, bias })
    }

    pub fn conv2d(mut self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let c = self.current.first().copied().unwrap_or(1);
        let fan_in = c * kernel * kernel;
        let bound = 1.0 / (fan_in as f32).sqrt();
        let weight = self.uniform(&[out_channels, c, kernel, kernel], bound);
        let bias = self.uniform(&[out_channels], bound);
        self.push(Layer::Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn relu(self) -> Self {
        self.push(Layer::Relu)
    }

    pub fn maxpool(self, kernel: usize, stride: usize) -> Self {
        self.push(Layer::MaxPool2d { kernel, stride })
    }

    pub fn dropout(self, rate: f32) -> Self {
        self.push(Layer::Dropout { rate })
    }

    pub fn flatten(self) -> Self {
        self.push(Layer::Flatten)
    }

    pub fn layer(self, layer: Layer) -> Self {
        self.push(layer)
    }

    pub fn build(self) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Network::new(self.input_shape, self.layers)
    }
}

/// The LeNet variant with two dropout layers used for the MNIST experiments:
/// conv(24, 5) → ReLU → pool(2) → conv(48, 5) → ReLU → dropout(0.5) →
/// pool(2) → flatten → dense(240) → ReLU → dropout(0.5) → dense(10),
/// on 1×32×32 inputs.
pub fn build_lenet_mnist(seed: u64) -> Network {
    NetworkBuilder::new(&[1, 32, 32], seed)
        .conv2d(24, 5, 1, 0)
        .relu()
        .maxpool(2, 2)
        .conv2d(48, 5, 1, 0)
        .relu()
        .dropout(0.5)
        .maxpool(2, 2)
        .flatten()
        .dense(240)
        .relu()
        .dropout(0.5)
        .dense(10)
        .build()
        .expect("LeNet layer shapes compose")
}

/// How dropout layers behave during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    /// Dropout layers are the identity (no masking, no rescaling).
    Off,
    /// Each dropout layer draws an i.i.d. Bernoulli(1 − p) keep mask from a
    /// generator seeded with this value; kept units are scaled by 1/(1 − p).
    SampleWithSeed(u64),
}

/// Per-layer side information recorded during the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum LayerAux {
    None,
    /// Winner indices per sample, concatenated over the batch.
    Pool(Vec<usize>),
    /// Keep mask, concatenated over the batch.
    Dropout(Vec<bool>),
}

/// Activations at every layer boundary of a batched forward pass.
#[derive(Clone, Debug)]
pub(crate) struct BatchTrace {
    /// `acts[l]` is the input of layer `l`; `acts[len]` the logits.
    pub acts: Vec<Tensor>,
    pub aux: Vec<LayerAux>,
}

fn batched(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

/// Forward pass over a batch `N × input_shape`. With `dropout = None` the
/// dropout layers are the identity.
pub(crate) fn forward_batch(
    net: &Network,
    x: &Tensor,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<BatchTrace> {
    let n = x.shape()[0];
    if x.shape()[1..] != net.input_shape[..] {
        return Err(Error::Layer {
            index: 0,
            kind: net.layers[0].kind(),
            message: format!(
                "input {:?} does not match network input {:?}",
                &x.shape()[1..],
                net.input_shape
            ),
        });
    }
    let mut acts = Vec::with_capacity(net.layers.len() + 1);
    let mut aux = Vec::with_capacity(net.layers.len());
    acts.push(x.clone());
    for (l, layer) in net.layers.iter().enumerate() {
        let input = &acts[l];
        let in_shape = &net.shapes[l];
        let out_shape = &net.shapes[l + 1];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let (out, a) = match layer {
            Layer::Dense { weight, bias } => {
                let mut out = vec![0.0; n * out_len];
                for row in out.chunks_mut(out_len) {
                    row.copy_from_slice(bias.data());
                }
                gemm(
                    MatRef::new(input.data(), n, in_len),
                    MatRef::new(weight.data(), out_len, in_len).t(),
                    1.0,
                    &mut out,
                );
                (out, LayerAux::None)
            }
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let g = ConvGeometry::new([in_shape[0], in_shape[1], in_shape[2]], weight.shape()[2], *stride, *padding)?;
                let mut cols = vec![0.0; g.patch_len() * g.positions()];
                let mut out = vec![0.0; n * out_len];
                for (xs, os) in input.data().chunks(in_len).zip(out.chunks_mut(out_len)) {
                    im2col(xs, &g, &mut cols);
                    conv_forward_cols(&cols, weight.data(), Some(bias.data()), &g, out_shape[0], os);
                }
                (out, LayerAux::None)
            }
            Layer::Relu => (input.data().iter().map(|&v| v.max(0.0)).collect(), LayerAux::None),
            Layer::MaxPool2d { kernel, stride } => {
                let g = PoolGeometry::new([in_shape[0], in_shape[1], in_shape[2]], *kernel, *stride)?;
                let mut out = vec![0.0; n * out_len];
                let mut idx = vec![0; n * out_len];
                for ((xs, os), is) in input
                    .data()
                    .chunks(in_len)
                    .zip(out.chunks_mut(out_len))
                    .zip(idx.chunks_mut(out_len))
                {
                    maxpool_into(xs, &g, os, is);
                }
                (out, LayerAux::Pool(idx))
            }
            Layer::Dropout { rate } => match dropout.as_deref_mut() {
                None => (input.data().to_vec(), LayerAux::None),
                Some(rng) => {
                    let scale = 1.0 / (1.0 - rate);
                    let mut mask = Vec::with_capacity(input.len());
                    let out = input
                        .data()
                        .iter()
                        .map(|&v| {
                            let keep = rng.random::<f32>() >= *rate;
                            mask.push(keep);
                            if keep {
                                v * scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    (out, LayerAux::Dropout(mask))
                }
            },
            Layer::Flatten => (input.data().to_vec(), LayerAux::None),
        };
        acts.push(Tensor::new(batched(n, out_shape), out)?);
        aux.push(a);
    }
    Ok(BatchTrace { acts, aux })
}

/// Activations of a single-sample forward pass, cached at every layer
/// boundary, plus the pooling winners and dropout keep masks that the
/// relevance rules need.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    acts: Vec<Tensor>,
    aux: Vec<LayerAux>,
}

impl ForwardTrace {
    /// Number of traced layers.
    pub fn len(&self) -> usize {
        self.aux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aux.is_empty()
    }

    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }

    pub fn layer_input(&self, l: usize) -> &Tensor {
        &self.acts[l]
    }

    pub fn layer_output(&self, l: usize) -> &Tensor {
        &self.acts[l + 1]
    }

    pub fn logits(&self) -> &Tensor {
        self.acts.last().unwrap()
    }

    /// Keep mask of dropout layer `l`, if masking was active.
    pub fn dropout_mask(&self, l: usize) -> Option<&[bool]> {
        match &self.aux[l] {
            LayerAux::Dropout(m) => Some(m),
            _ => None,
        }
    }

    /// Flat input index of each pooling winner of layer `l`.
    pub fn pool_argmax(&self, l: usize) -> Option<ArgmaxIndices> {
        match &self.aux[l] {
            LayerAux::Pool(idx) => Some(ArgmaxIndices(idx.clone())),
            _ => None,
        }
    }

    pub(crate) fn pool_argmax_slice(&self, l: usize) -> Option<&[usize]> {
        match &self.aux[l] {
            LayerAux::Pool(idx) => Some(idx),
            _ => None,
        }
    }
}

/// Single-sample forward pass of `x` (shaped like `net.input_shape()`).
pub fn forward(net: &Network, x: &Tensor, mode: DropoutMode) -> Result<ForwardTrace> {
    if x.shape() != net.input_shape() {
        return Err(Error::Layer {
            index: 0,
            kind: net.layers[0].kind(),
            message: format!(
                "input {:?} does not match network input {:?}",
                x.shape(),
                net.input_shape
            ),
        });
    }
    let xb = x.clone().reshape(&batched(1, x.shape()))?;
    let mut rng = match mode {
        DropoutMode::Off => None,
        DropoutMode::SampleWithSeed(seed) => Some(rng::rng_from_seed(seed)),
    };
    let trace = forward_batch(net, &xb, rng.as_mut())?;
    let acts = trace
        .acts
        .into_iter()
        .enumerate()
        .map(|(l, t)| t.reshape(&net.shapes[l]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardTrace {
        acts,
        aux: trace.aux,
    })
}

/// Class scores (logits) for a batch `N × input_shape`, dropout off.
pub fn predict_batch(net: &Network, x: &Tensor) -> Result<Tensor> {
    let trace = forward_batch(net, x, None)?;
    Ok(trace.acts.into_iter().last().unwrap())
}

/// Class scores for one sample, dropout off.
pub fn predict(net: &Network, x: &Tensor) -> Result<Tensor> {
    Ok(forward(net, x, DropoutMode::Off)?.logits().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net(n: usize) -> Network {
        Network::new(
            vec![n],
            vec![Layer::Dense {
                weight: Tensor::eye(n),
                bias: Tensor::zeros(&[n]),
            }],
        )
        .unwrap()
    }

    fn small_net(rate: f32) -> Network {
        NetworkBuilder::new(&[1, 8, 8], 3)
            .conv2d(3, 3, 1, 1)
            .relu()
            .dropout(rate)
            .maxpool(2, 2)
            .flatten()
            .dense(6)
            .relu()
            .dropout(rate)
            .dense(4)
            .build()
            .unwrap()
    }

    fn input(seed: u64) -> Tensor {
        let mut r = rng::rng_from_seed(seed);
        Tensor::from_fn(&[1, 8, 8], |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn dense_identity_forward() {
        let net = identity_net(3);
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let t = forward(&net, &x, DropoutMode::Off).unwrap();
        assert_eq!(t.logits(), &x);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn zero_rate_equals_off() {
        let net = small_net(0.0);
        let x = input(1);
        let off = forward(&net, &x, DropoutMode::Off).unwrap();
        for seed in 0..5 {
            let on = forward(&net, &x, DropoutMode::SampleWithSeed(seed)).unwrap();
            assert_eq!(on.logits(), off.logits());
        }
    }

    #[test]
    fn seeded_forward_is_bit_identical() {
        let net = small_net(0.5);
        let x = input(2);
        let a = forward(&net, &x, DropoutMode::SampleWithSeed(9)).unwrap();
        let b = forward(&net, &x, DropoutMode::SampleWithSeed(9)).unwrap();
        assert_eq!(a, b);
        let c = forward(&net, &x, DropoutMode::SampleWithSeed(10)).unwrap();
        assert_ne!(a.logits(), c.logits());
    }

    #[test]
    fn trace_boundaries_are_consistent() {
        let net = small_net(0.5);
        let t = forward(&net, &input(3), DropoutMode::SampleWithSeed(1)).unwrap();
        assert_eq!(t.len(), net.layers().len());
        for l in 0..t.len() - 1 {
            assert_eq!(t.layer_output(l), t.layer_input(l + 1));
        }
        assert!(t.dropout_mask(2).is_some());
        assert!(t.pool_argmax(3).is_some());
        assert!(t.dropout_mask(0).is_none());
    }

    #[test]
    fn dropped_units_are_zero_kept_are_scaled() {
        let net = small_net(0.5);
        let t = forward(&net, &input(4), DropoutMode::SampleWithSeed(5)).unwrap();
        let mask = t.dropout_mask(2).unwrap();
        let (inp, out) = (t.layer_input(2), t.layer_output(2));
        for ((&keep, &i), &o) in mask.iter().zip(inp.data()).zip(out.data()) {
            if keep {
                assert_eq!(o, i * 2.0);
            } else {
                assert_eq!(o, 0.0);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let err = Network::new(
            vec![4],
            vec![
                Layer::Relu,
                Layer::Dense {
                    weight: Tensor::zeros(&[2, 3]),
                    bias: Tensor::zeros(&[2]),
                },
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Layer { index: 1, .. }), "{err}");
        let net = identity_net(3);
        assert!(matches!(
            forward(&net, &Tensor::zeros(&[4]), DropoutMode::Off),
            Err(Error::Layer { index: 0, .. })
        ));
    }

    #[test]
    fn rejects_invalid_dropout_rate() {
        assert!(Network::new(vec![2], vec![Layer::Dropout { rate: 1.0 }, Layer::Flatten]).is_err());
    }

    #[test]
    fn lenet_architecture() {
        let net = build_lenet_mnist(0);
        let kinds: Vec<_> = net.layers().iter().map(Layer::kind).collect();
        assert_eq!(
            kinds,
            [
                "conv2d", "relu", "maxpool2d", "conv2d", "relu", "dropout", "maxpool2d",
                "flatten", "dense", "relu", "dropout", "dense"
            ]
        );
        // the published list has no explicit flatten step
        assert_eq!(kinds.iter().filter(|k| **k != "flatten").count(), 11);
        assert_eq!(net.dropout_rates(), vec![0.5, 0.5]);
        assert_eq!(net.class_count(), 10);
        assert_eq!(net.input_shape(), &[1, 32, 32]);
        assert_eq!(net.shape_at(8), &[1200]);
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = small_net(0.3);
        let xs: Vec<Tensor> = (0..3).map(input).collect();
        let batch = predict_batch(&net, &Tensor::stack(&xs).unwrap()).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let single = predict(&net, x).unwrap();
            for (a, b) in batch.sample(i).data().iter().zip(single.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
