//! Forward inference over dense / conv2d / relu / maxpool2d / flatten stacks.
//!
//! Masks are applied by substituting `0.0` for every pruned weight and running
//! the exact same kernels, so a masked forward pass is bit-identical to one over
//! a model whose pruned weights were overwritten with zero.

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::model::{conv_output_dim, LayerSpec, Model};
use crate::tensor::Tensor;

/// Copy of `model` with every pruned weight set to `0.0`.
pub fn apply_masks(model: &Model, masks: &MaskSet) -> Result<Model> {
    masks.check_congruent(model)?;
    let mut masked = model.clone();
    for mask in masks {
        let weight = masked.layers[mask.layer_index]
            .weight_mut()
            .expect("congruent mask references a weighted layer");
        for (w, &keep) in weight.data_mut().iter_mut().zip(mask.bits()) {
            if !keep {
                *w = 0.0;
            }
        }
    }
    Ok(masked)
}

/// Pre-softmax class scores for one input.
pub fn forward(model: &Model, masks: Option<&MaskSet>, input: &Tensor) -> Result<Tensor> {
    let acts = forward_all_activations(model, masks, input)?;
    let out = acts.into_iter().last().ok_or(Error::NoWeightedLayer)?;
    out.check_finite()?;
    Ok(out)
}

/// Output of every layer in order; the last element is the class-score vector.
pub fn forward_all_activations(
    model: &Model,
    masks: Option<&MaskSet>,
    input: &Tensor,
) -> Result<Vec<Tensor>> {
    match masks {
        Some(masks) => run_layers(&apply_masks(model, masks)?, input),
        None => run_layers(model, input),
    }
}

/// Forward pass over an already-masked (or unmasked) model.
pub fn run_layers(model: &Model, input: &Tensor) -> Result<Vec<Tensor>> {
    if input.shape() != model.input_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: model.input_shape.clone(),
            actual: input.shape().to_vec(),
        });
    }
    let mut acts: Vec<Tensor> = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let x = acts.last().unwrap_or(input);
        let y = run_layer(i, layer, x)?;
        acts.push(y);
    }
    Ok(acts)
}

pub fn run_layer(index: usize, layer: &LayerSpec, x: &Tensor) -> Result<Tensor> {
    // Validates the input shape and names the layer on mismatch.
    layer.output_shape(index, x.shape())?;
    match layer {
        LayerSpec::Dense { weight, bias } => dense_forward(weight, bias, x),
        LayerSpec::Conv2d {
            weight,
            bias,
            stride,
            padding,
        } => conv2d_forward(weight, bias, *stride, *padding, x),
        LayerSpec::Relu => Ok(x.map(|v| v.max(0.0))),
        LayerSpec::Maxpool2d { window, stride } => maxpool2d_forward(*window, *stride, x),
        LayerSpec::Flatten => x.clone().reshape(vec![x.len()]),
    }
}

/// `y[i] = sum_j W[i, j] * x[j] + b[i]`, accumulated in index order.
pub fn dense_forward(weight: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (out_units, in_units) = (weight.shape()[0], weight.shape()[1]);
    if x.len() != in_units {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: vec![in_units],
            actual: x.shape().to_vec(),
        });
    }
    let w = weight.data();
    let xs = x.data();
    let out = (0..out_units)
        .map(|i| {
            let row = &w[i * in_units..(i + 1) * in_units];
            let mut acc = 0.0f32;
            for (a, b) in row.iter().zip(xs) {
                acc += a * b;
            }
            acc + bias.data()[i]
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

/// 2-D cross-correlation (no kernel flip) with symmetric zero padding.
/// `input` is `[in_ch, h, w]`, `weight` is `[out_ch, in_ch, kh, kw]`.
pub fn conv2d_forward(
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    input: &Tensor,
) -> Result<Tensor> {
    let ws = weight.shape();
    let (out_ch, in_ch, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let is = input.shape();
    if is.len() != 3 || is[0] != in_ch {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: vec![in_ch, 0, 0],
            actual: is.to_vec(),
        });
    }
    let (h, w) = (is[1], is[2]);
    let oh = conv_output_dim(h, padding, kh, stride)?;
    let ow = conv_output_dim(w, padding, kw, stride)?;
    let x = input.data();
    let wd = weight.data();
    let mut out = vec![0.0f32; out_ch * oh * ow];
    for o in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for i in 0..in_ch {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let wv = wd[((o * in_ch + i) * kh + ky) * kw + kx];
                            let xv = x[(i * h + iy as usize) * w + ix as usize];
                            acc += wv * xv;
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc + bias.data()[o];
            }
        }
    }
    Tensor::new(vec![out_ch, oh, ow], out)
}

/// Max pooling over `window x window` patches, no padding.
pub fn maxpool2d_forward(window: usize, stride: usize, input: &Tensor) -> Result<Tensor> {
    let is = input.shape();
    if is.len() != 3 {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: vec![0, 0, 0],
            actual: is.to_vec(),
        });
    }
    let (c, h, w) = (is[0], is[1], is[2]);
    let oh = conv_output_dim(h, 0, window, stride)?;
    let ow = conv_output_dim(w, 0, window, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..window {
                    for kx in 0..window {
                        let v = x[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                        if v > m {
                            m = v;
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}
