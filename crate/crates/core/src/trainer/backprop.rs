//! Reverse-mode gradients through a cached batch forward pass.

use crate::error::Result;
use crate::network::{forward_batch, BatchTrace, Layer, LayerAux, Network};
use crate::tensor::{col2im, gemm, im2col, ConvGeometry, MatRef, Tensor};

/// Parameter gradients aligned with `net.layers()`; `None` for layers
/// without parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Option<(Tensor, Tensor)>>,
    /// Gradient with respect to the network input, when requested.
    pub input: Option<Tensor>,
}

/// Back-propagates `grad_logits` (`N × k`) through `trace`.
pub(crate) fn backward(
    net: &Network,
    trace: &BatchTrace,
    grad_logits: &Tensor,
    want_input_grad: bool,
) -> Result<Gradients> {
    let n = trace.acts[0].shape()[0];
    let mut grads: Vec<Option<(Tensor, Tensor)>> = vec![None; net.layers().len()];
    let mut grad = grad_logits.data().to_vec();
    for (l, layer) in net.layers().iter().enumerate().rev() {
        let need_in = l > 0 || want_input_grad;
        let in_shape = net.shape_at(l);
        let out_shape = net.shape_at(l + 1);
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let input = trace.acts[l].data();
        grad = match layer {
            Layer::Dense { weight, .. } => {
                let mut dw = vec![0.0; out_len * in_len];
                gemm(
                    MatRef::new(&grad, n, out_len).t(),
                    MatRef::new(input, n, in_len),
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0f32; out_len];
                for row in grad.chunks(out_len) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                grads[l] = Some((
                    Tensor::new(weight.shape().to_vec(), dw)?,
                    Tensor::new(vec![out_len], db)?,
                ));
                if need_in {
                    let mut dx = vec![0.0; n * in_len];
                    gemm(
                        MatRef::new(&grad, n, out_len),
                        MatRef::new(weight.data(), out_len, in_len),
                        0.0,
                        &mut dx,
                    );
                    dx
                } else {
                    Vec::new()
                }
            }
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let g = ConvGeometry::new(
                    [in_shape[0], in_shape[1], in_shape[2]],
                    weight.shape()[2],
                    *stride,
                    *padding,
                )?;
                let (c_out, k, p) = (out_shape[0], g.patch_len(), g.positions());
                let mut dw = vec![0.0; c_out * k];
                let mut db = vec![0.0f32; c_out];
                let mut cols = vec![0.0; k * p];
                let mut dcols = vec![0.0; k * p];
                let mut dx = if need_in { vec![0.0; n * in_len] } else { Vec::new() };
                for s in 0..n {
                    let gs = &grad[s * out_len..(s + 1) * out_len];
                    im2col(&input[s * in_len..(s + 1) * in_len], &g, &mut cols);
                    gemm(
                        MatRef::new(gs, c_out, p),
                        MatRef::new(&cols, k, p).t(),
                        1.0,
                        &mut dw,
                    );
                    for (d, row) in db.iter_mut().zip(gs.chunks(p)) {
                        *d += row.iter().sum::<f32>();
                    }
                    if need_in {
                        gemm(
                            MatRef::new(weight.data(), c_out, k).t(),
                            MatRef::new(gs, c_out, p),
                            0.0,
                            &mut dcols,
                        );
                        col2im(&dcols, &g, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                grads[l] = Some((
                    Tensor::new(weight.shape().to_vec(), dw)?,
                    Tensor::new(vec![c_out], db)?,
                ));
                dx
            }
            Layer::Relu => {
                if !need_in {
                    Vec::new()
                } else {
                    grad.iter()
                        .zip(input)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect()
                }
            }
            Layer::MaxPool2d { .. } => {
                let LayerAux::Pool(idx) = &trace.aux[l] else {
                    unreachable!("pool layer without argmax cache")
                };
                let mut dx = vec![0.0; n * in_len];
                for s in 0..n {
                    let base = s * in_len;
                    for o in s * out_len..(s + 1) * out_len {
                        dx[base + idx[o]] += grad[o];
                    }
                }
                dx
            }
            Layer::Dropout { rate } => match &trace.aux[l] {
                LayerAux::Dropout(mask) => {
                    let scale = 1.0 / (1.0 - rate);
                    grad.iter()
                        .zip(mask)
                        .map(|(&g, &keep)| if keep { g * scale } else { 0.0 })
                        .collect()
                }
                _ => grad,
            },
            Layer::Flatten => grad,
        };
    }
    let input = if want_input_grad {
        Some(Tensor::new(trace.acts[0].shape().to_vec(), grad)?)
    } else {
        None
    };
    Ok(Gradients {
        layers: grads,
        input,
    })
}

/// Gradient of the class score `f_c` with respect to a single input,
/// dropout off.
pub fn input_gradient(net: &Network, x: &Tensor, class_index: usize) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let xb = x.clone().reshape(&shape)?;
    let trace = forward_batch(net, &xb, None)?;
    let k = net.class_count();
    if class_index >= k {
        return Err(crate::Error::Index(format!(
            "class {class_index} outside 0..{k}"
        )));
    }
    let mut seed = Tensor::zeros(&[1, k]);
    seed.data_mut()[class_index] = 1.0;
    let g = backward(net, &trace, &seed, true)?;
    g.input.unwrap().reshape(x.shape())
}
