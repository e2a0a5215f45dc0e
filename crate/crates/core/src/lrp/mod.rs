//! Layer-wise relevance propagation over a traced forward pass.

mod rules;

pub use rules::{lrp_conv, lrp_dense, lrp_maxpool, lrp_passthrough, Rule};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ForwardTrace, Layer, Network};
use crate::tensor::{ConvGeometry, Tensor};

/// Which rule each layer uses: a default plus per-layer-index overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub default_rule: Rule,
    pub overrides: BTreeMap<usize, Rule>,
}

impl Default for RuleConfig {
    /// LRP-ε with ε = 1e-9 everywhere.
    fn default() -> Self {
        RuleConfig::uniform(Rule::Epsilon(Rule::DEFAULT_EPSILON))
    }
}

impl RuleConfig {
    pub fn uniform(rule: Rule) -> Self {
        RuleConfig {
            default_rule: rule,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, layer: usize, rule: Rule) -> Self {
        self.overrides.insert(layer, rule);
        self
    }

    pub fn rule_for(&self, layer: usize) -> Rule {
        self.overrides.get(&layer).copied().unwrap_or(self.default_rule)
    }

    pub fn validate(&self) -> Result<()> {
        self.default_rule.validate()?;
        self.overrides.values().try_for_each(Rule::validate)
    }

    /// Compact description, e.g. `epsilon(1e-9)` or
    /// `zero;0=gamma(0.25);3=gamma(0.25)`.
    pub fn describe(&self) -> String {
        let mut s = self.default_rule.to_string();
        for (l, r) in &self.overrides {
            s.push_str(&format!(";{l}={r}"));
        }
        s
    }
}

/// Composite assignment: LRP-γ (γ = 0.25) on convolutions, LRP-ε
/// (ε = 1e-9) on dense layers, LRP-0 on the top dense layer.
pub fn cmp_config(net: &Network) -> RuleConfig {
    cmp_config_with(net, Rule::DEFAULT_EPSILON, Rule::DEFAULT_GAMMA)
}

pub fn cmp_config_with(net: &Network, epsilon: f32, gamma: f32) -> RuleConfig {
    let last_dense = net.layers().iter().rposition(Layer::is_dense);
    let mut cfg = RuleConfig::uniform(Rule::Zero);
    for (i, layer) in net.layers().iter().enumerate() {
        let rule = match layer {
            Layer::Conv2d { .. } => Rule::Gamma(gamma),
            Layer::Dense { .. } if Some(i) == last_dense => Rule::Zero,
            Layer::Dense { .. } => Rule::Epsilon(epsilon),
            _ => continue,
        };
        cfg.overrides.insert(i, rule);
    }
    cfg
}

/// Input relevance for one explained class.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    pub values: Tensor,
    pub class_index: usize,
}

impl RelevanceMap {
    pub fn new(values: Tensor, class_index: usize) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::Numeric("relevance map has non-finite entries".into()));
        }
        Ok(RelevanceMap {
            values,
            class_index,
        })
    }

    /// One value per pixel: sums a C×H×W map over channels into H×W; other
    /// shapes are returned as is.
    pub fn pixel_map(&self) -> Tensor {
        channel_sum(&self.values)
    }
}

/// Sums a `C×H×W` tensor over channels; other ranks are returned unchanged.
pub fn channel_sum(t: &Tensor) -> Tensor {
    match *t.shape() {
        [c, h, w] => {
            let mut out = Tensor::zeros(&[h, w]);
            for ch in 0..c {
                for (o, v) in out
                    .data_mut()
                    .iter_mut()
                    .zip(&t.data()[ch * h * w..(ch + 1) * h * w])
                {
                    *o += v;
                }
            }
            out
        }
        _ => t.clone(),
    }
}

/// Relevance at every layer boundary: entry `l` is the relevance of layer
/// `l`'s input, the last entry the initial output relevance
/// `onehot(c)·f_c(x)`.
pub fn explain_layers(
    net: &Network,
    trace: &ForwardTrace,
    class_index: usize,
    cfg: &RuleConfig,
) -> Result<Vec<Tensor>> {
    let k = net.class_count();
    if class_index >= k {
        return Err(Error::Index(format!("class {class_index} outside 0..{k}")));
    }
    if trace.len() != net.layers().len() {
        return Err(Error::TraceCorruption(format!(
            "trace has {} layers, network {}",
            trace.len(),
            net.layers().len()
        )));
    }
    cfg.validate()?;
    let mut top = Tensor::zeros(&[k]);
    top.data_mut()[class_index] = trace.logits().data()[class_index];
    let mut out = vec![top];
    for (l, layer) in net.layers().iter().enumerate().rev() {
        let r_out = out.last().unwrap();
        let input = trace.layer_input(l);
        let rule = cfg.rule_for(l);
        let located = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("layer {l} ({}): {m}", layer.kind())),
            other => other,
        };
        let r_in = match layer {
            Layer::Dense { weight, bias } => {
                let r = rules::dense_slices(&rule, input.data(), weight.data(), bias.data(), r_out.data())
                    .map_err(located)?;
                Tensor::new(input.shape().to_vec(), r)?
            }
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let s = input.shape();
                let g = ConvGeometry::new([s[0], s[1], s[2]], weight.shape()[2], *stride, *padding)?;
                let r = rules::conv_slices(&rule, input.data(), &g, weight.data(), bias.data(), r_out.data())
                    .map_err(located)?;
                Tensor::new(s.to_vec(), r)?
            }
            Layer::MaxPool2d { .. } => {
                let idx = trace.pool_argmax_slice(l).ok_or_else(|| {
                    Error::TraceCorruption(format!("no pooling winners recorded for layer {l}"))
                })?;
                let r = rules::maxpool_slices(idx, r_out.data(), input.len())?;
                Tensor::new(input.shape().to_vec(), r)?
            }
            Layer::Relu | Layer::Flatten | Layer::Dropout { .. } => {
                lrp_passthrough(r_out, input.shape())?
            }
        };
        out.push(r_in);
    }
    out.reverse();
    Ok(out)
}

/// Relevance of every input feature for `class_index`, propagated from
/// `f_c(x)` at the output down to the input.
pub fn explain(
    net: &Network,
    trace: &ForwardTrace,
    class_index: usize,
    cfg: &RuleConfig,
) -> Result<RelevanceMap> {
    let mut layers = explain_layers(net, trace, class_index, cfg)?;
    RelevanceMap::new(layers.swap_remove(0), class_index)
}
