//! Per-layer relevance redistribution.
//!
//! For a layer with pre-activations `z_j = Σ_i x_i·w_ij + b_j`, every rule
//! computes
//!
//! ```text
//! R_i = x_i · Σ_j w'_ij · R_j / (z'_j + stab_j)
//! ```
//!
//! where `w' = w`, `stab = 0` for LRP-0; `stab_j = ε·sign(z_j)` (sign(0) =
//! +1) for LRP-ε; and `w' = w + γ·w⁺`, `b' = b + γ·b⁺`, `stab = 0` for
//! LRP-γ. The bias is part of the denominator, so it absorbs its share of
//! relevance. A denominator of exactly zero contributes nothing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{col2im, conv_shapes, gemm, im2col, ConvGeometry, MatRef, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "param", rename_all = "snake_case")]
pub enum Rule {
    Zero,
    Epsilon(f32),
    Gamma(f32),
}

impl Rule {
    pub const DEFAULT_EPSILON: f32 = 1e-9;
    pub const DEFAULT_GAMMA: f32 = 0.25;

    pub fn validate(&self) -> Result<()> {
        match *self {
            Rule::Epsilon(e) if !(e > 0.0 && e.is_finite()) => Err(Error::Precondition(format!(
                "epsilon must be positive, got {e}"
            ))),
            Rule::Gamma(g) if !(g >= 0.0 && g.is_finite()) => Err(Error::Precondition(format!(
                "gamma must be non-negative, got {g}"
            ))),
            _ => Ok(()),
        }
    }

    fn modify(&self, v: f32) -> f32 {
        match *self {
            Rule::Gamma(g) => v + g * v.max(0.0),
            _ => v,
        }
    }

    fn stabilize(&self, z: f32) -> f32 {
        match *self {
            Rule::Epsilon(e) => z + if z >= 0.0 { e } else { -e },
            _ => z,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Zero => write!(f, "zero"),
            Rule::Epsilon(e) => write!(f, "epsilon({e:e})"),
            Rule::Gamma(g) => write!(f, "gamma({g})"),
        }
    }
}

/// `s_j = R_j / (z_j + stab_j)`; zero where the denominator vanishes.
fn ratios(rule: &Rule, z: &mut [f32], relevance: &[f32]) -> Result<()> {
    for (j, (zj, &r)) in z.iter_mut().zip(relevance).enumerate() {
        let d = rule.stabilize(*zj);
        let s = if d == 0.0 { 0.0 } else { r / d };
        if !s.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite relevance ratio at neuron {j} (R = {r}, denominator = {d})"
            )));
        }
        *zj = s;
    }
    Ok(())
}

fn finish(input: &[f32], mut c: Vec<f32>) -> Result<Vec<f32>> {
    for (i, (ci, &x)) in c.iter_mut().zip(input).enumerate() {
        *ci *= x;
        if !ci.is_finite() {
            return Err(Error::Numeric(format!("non-finite relevance at input {i}")));
        }
    }
    Ok(c)
}

pub(crate) fn dense_slices(
    rule: &Rule,
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
    relevance_out: &[f32],
) -> Result<Vec<f32>> {
    let (n_out, n_in) = (bias.len(), input.len());
    let w: std::borrow::Cow<[f32]> = match rule {
        Rule::Gamma(_) => weight.iter().map(|&v| rule.modify(v)).collect::<Vec<_>>().into(),
        _ => weight.into(),
    };
    let mut z: Vec<f32> = bias.iter().map(|&b| rule.modify(b)).collect();
    gemm(
        MatRef::new(&w, n_out, n_in),
        MatRef::new(input, n_in, 1),
        1.0,
        &mut z,
    );
    ratios(rule, &mut z, relevance_out)?;
    let mut c = vec![0.0; n_in];
    gemm(
        MatRef::new(&w, n_out, n_in).t(),
        MatRef::new(&z, n_out, 1),
        0.0,
        &mut c,
    );
    finish(input, c)
}

/// Relevance of the inputs of a dense layer (`weight: out × in`).
pub fn lrp_dense(
    rule: &Rule,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    relevance_out: &Tensor,
) -> Result<Tensor> {
    let ws = weight.shape();
    if ws.len() != 2
        || ws[1] != input.len()
        || ws[0] != bias.len()
        || ws[0] != relevance_out.len()
    {
        return Err(Error::dim(format!(
            "dense LRP: weight {ws:?}, bias {:?}, input {:?}, relevance {:?}",
            bias.shape(),
            input.shape(),
            relevance_out.shape()
        )));
    }
    let r = dense_slices(rule, input.data(), weight.data(), bias.data(), relevance_out.data())?;
    Tensor::new(input.shape().to_vec(), r)
}

pub(crate) fn conv_slices(
    rule: &Rule,
    input: &[f32],
    g: &ConvGeometry,
    weight: &[f32],
    bias: &[f32],
    relevance_out: &[f32],
) -> Result<Vec<f32>> {
    let (c_out, k, p) = (bias.len(), g.patch_len(), g.positions());
    let w: std::borrow::Cow<[f32]> = match rule {
        Rule::Gamma(_) => weight.iter().map(|&v| rule.modify(v)).collect::<Vec<_>>().into(),
        _ => weight.into(),
    };
    let mut cols = vec![0.0; k * p];
    im2col(input, g, &mut cols);
    let mut z = vec![0.0; c_out * p];
    for (co, row) in z.chunks_mut(p).enumerate() {
        row.fill(rule.modify(bias[co]));
    }
    gemm(MatRef::new(&w, c_out, k), MatRef::new(&cols, k, p), 1.0, &mut z);
    ratios(rule, &mut z, relevance_out)?;
    // reuse the patch buffer for W'^T · s
    gemm(MatRef::new(&w, c_out, k).t(), MatRef::new(&z, c_out, p), 0.0, &mut cols);
    let mut c = vec![0.0; g.input_len()];
    col2im(&cols, g, &mut c);
    finish(input, c)
}

/// Relevance of the inputs of a convolution; same decomposition as
/// [`lrp_dense`] with convolutional connectivity.
pub fn lrp_conv(
    rule: &Rule,
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    relevance_out: &Tensor,
) -> Result<Tensor> {
    let (g, c_out) = conv_shapes(input, kernels, stride, padding)?;
    if bias.len() != c_out || relevance_out.len() != c_out * g.positions() {
        return Err(Error::dim(format!(
            "conv LRP: bias {:?} / relevance {:?} do not match {c_out}×{}×{}",
            bias.shape(),
            relevance_out.shape(),
            g.out_height(),
            g.out_width()
        )));
    }
    let r = conv_slices(rule, input.data(), &g, kernels.data(), bias.data(), relevance_out.data())?;
    Tensor::new(input.shape().to_vec(), r)
}

pub(crate) fn maxpool_slices(
    argmax: &[usize],
    relevance_out: &[f32],
    input_len: usize,
) -> Result<Vec<f32>> {
    if argmax.len() != relevance_out.len() {
        return Err(Error::TraceCorruption(format!(
            "{} pooling winners for {} relevance values",
            argmax.len(),
            relevance_out.len()
        )));
    }
    let mut r = vec![0.0; input_len];
    for (&i, &v) in argmax.iter().zip(relevance_out) {
        let slot = r.get_mut(i).ok_or_else(|| {
            Error::TraceCorruption(format!("pooling winner {i} outside input of {input_len}"))
        })?;
        *slot += v;
    }
    Ok(r)
}

/// Winner-takes-all: each pooled relevance goes to its recorded arg-max.
pub fn lrp_maxpool(
    argmax: &crate::tensor::ArgmaxIndices,
    relevance_out: &Tensor,
    input_shape: &[usize],
) -> Result<Tensor> {
    let n: usize = input_shape.iter().product();
    let r = maxpool_slices(&argmax.0, relevance_out.data(), n)?;
    Tensor::new(input_shape.to_vec(), r)
}

/// ReLU, Flatten and Dropout pass relevance through unchanged (reshaped to
/// the layer input). Dropped units already carry zero activation, so they
/// receive nothing from the layer below's decomposition.
pub fn lrp_passthrough(relevance_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    relevance_out.clone().reshape(input_shape)
}
