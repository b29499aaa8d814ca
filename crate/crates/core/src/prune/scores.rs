//! Weight-importance scores: magnitude (MAP) and lookahead (LAP).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{MaskSet, PruneMask};
use crate::model::{LayerSpec, Model};
use crate::tensor::Tensor;

/// Which neighbours a lookahead score takes into account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LapMode {
    Both,
    /// Only the following weighted layer.
    Forward,
    /// Only the preceding weighted layer.
    Backward,
}

/// `|w|` elementwise.
pub fn map_scores(weight: &Tensor) -> Tensor {
    weight.map(f32::abs)
}

/// Lookahead scores for weighted layer `layer_index`:
/// `|W[i, j]| * prev_norm(j) * next_norm(i)`, where `prev_norm(j)` is the
/// Euclidean norm of the (masked) weights in the nearest preceding weighted
/// layer that produce input unit/channel `j`, and `next_norm(i)` the norm of the
/// (masked) weights in the nearest following weighted layer that consume output
/// unit/channel `i`. A missing or excluded neighbour contributes a factor of 1.
pub fn lap_scores(model: &Model, masks: &MaskSet, layer_index: usize, mode: LapMode) -> Result<Tensor> {
    let layer = model.weighted_layer(layer_index)?;
    masks.check_congruent(model)?;
    let weight = layer.weight().expect("weighted");
    let out_units = weight.shape()[0];
    let in_units = weight.shape()[1];
    let per_out = weight.len() / out_units;
    // elements of one [o, i, ..] slice: kernel area for conv, 1 for dense
    let per_in = per_out / in_units;

    let prev = match mode {
        LapMode::Both | LapMode::Backward => {
            previous_weighted(model, layer_index).map(|p| producer_norms(model, masks, p, in_units))
        }
        LapMode::Forward => None,
    }
    .transpose()?;
    let next = match mode {
        LapMode::Both | LapMode::Forward => {
            next_weighted(model, layer_index).map(|n| consumer_norms(model, masks, n, out_units))
        }
        LapMode::Backward => None,
    }
    .transpose()?;

    let data = weight
        .data()
        .iter()
        .enumerate()
        .map(|(flat, &w)| {
            let o = flat / per_out;
            let i = (flat % per_out) / per_in;
            let p = prev.as_ref().map_or(1.0, |v| v[i]);
            let n = next.as_ref().map_or(1.0, |v| v[o]);
            (f64::from(w.abs()) * (p * n)) as f32
        })
        .collect();
    Tensor::new(weight.shape().to_vec(), data)
}

fn previous_weighted(model: &Model, layer_index: usize) -> Option<usize> {
    (0..layer_index).rev().find(|&i| model.layers[i].is_weighted())
}

fn next_weighted(model: &Model, layer_index: usize) -> Option<usize> {
    (layer_index + 1..model.layers.len()).find(|&i| model.layers[i].is_weighted())
}

fn masked_values<'a>(layer: &'a LayerSpec, mask: &'a PruneMask) -> impl Iterator<Item = f64> + 'a {
    layer
        .weight()
        .expect("weighted")
        .data()
        .iter()
        .zip(mask.bits())
        .map(|(&w, &keep)| if keep { f64::from(w) } else { 0.0 })
}

/// Norm of each output slice (dense row / conv `[c, :, :, :]`) of layer `producer`,
/// expanded to the `units` inputs of the layer it feeds. When a flatten sits in
/// between, every flat position of a channel maps to that channel's norm.
fn producer_norms(model: &Model, masks: &MaskSet, producer: usize, units: usize) -> Result<Vec<f64>> {
    let layer = &model.layers[producer];
    let mask = masks.get(producer).ok_or(Error::NotWeighted(producer))?;
    let channels = mask.num_channels();
    let slice = mask.channel_len();
    let mut sq = vec![0.0f64; channels];
    for (flat, v) in masked_values(layer, mask).enumerate() {
        sq[flat / slice] += v * v;
    }
    let group = spread(channels, units, producer)?;
    Ok((0..units).map(|u| sq[u / group].sqrt()).collect())
}

/// Norm of the weights of layer `consumer` that read each of `units` upstream
/// output units/channels: dense column `[:, j]`, conv slice `[:, j, :, :]`, or
/// all flat columns of channel `j` when the consumer sits after a flatten.
fn consumer_norms(model: &Model, masks: &MaskSet, consumer: usize, units: usize) -> Result<Vec<f64>> {
    let layer = &model.layers[consumer];
    let mask = masks.get(consumer).ok_or(Error::NotWeighted(consumer))?;
    let shape = mask.shape();
    let in_count = shape[1];
    let per_in: usize = shape[2..].iter().product();
    let per_out = in_count * per_in;
    let mut sq_in = vec![0.0f64; in_count];
    for (flat, v) in masked_values(layer, mask).enumerate() {
        sq_in[(flat % per_out) / per_in] += v * v;
    }
    let group = spread(units, in_count, consumer)?;
    Ok((0..units)
        .map(|u| sq_in[u * group..(u + 1) * group].iter().sum::<f64>().sqrt())
        .collect())
}

/// How many downstream units each upstream channel occupies.
fn spread(upstream: usize, downstream: usize, layer: usize) -> Result<usize> {
    if upstream == 0 || downstream % upstream != 0 {
        return Err(Error::InvalidLayer {
            layer,
            message: format!("cannot map {upstream} channels onto {downstream} units"),
        });
    }
    Ok(downstream / upstream)
}
