//! Per-layer activation maps for one sample, with dead-channel detection.

use serde::{Deserialize, Serialize};

use crate::engine;
use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::model::{Dataset, LayerSpec, Model};
use crate::prune::MaskEdit;
use crate::session::Session;

/// Absolute tolerance for calling a channel dead.
pub const DEAD_TOLERANCE: f32 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    Current,
    Baseline,
}

impl std::str::FromStr for MaskVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "current" => Ok(MaskVariant::Current),
            "baseline" => Ok(MaskVariant::Baseline),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub min: f32,
    pub max: f32,
    pub mean: f32,
    pub is_dead: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channel: usize,
    pub height: usize,
    pub width: usize,
    /// Raw row-major values.
    pub values: Vec<f32>,
    pub stats: ChannelStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps {
    pub sample_index: usize,
    pub layer_index: usize,
    pub variant: MaskVariant,
    pub output_shape: Vec<usize>,
    pub maps: Vec<FeatureMap>,
}

/// What each output position of `layer_index` would hold if every weight of the
/// channel (or unit) feeding it were pruned, i.e. the activated bias. `None` for
/// positions that no weighted layer upstream produces.
pub fn dead_reference(model: &Model, layer_index: usize) -> Result<Option<Vec<f32>>> {
    let shapes = model.layer_shapes()?;
    // per-channel constants for spatial outputs, per-unit for flat ones
    let mut reference: Option<Vec<f32>> = None;
    for (i, layer) in model.layers.iter().enumerate().take(layer_index + 1) {
        reference = match layer {
            LayerSpec::Dense { bias, .. } | LayerSpec::Conv2d { bias, .. } => Some(bias.data().to_vec()),
            LayerSpec::Relu => reference.map(|r| r.into_iter().map(|v| v.max(0.0)).collect()),
            LayerSpec::Maxpool2d { .. } => reference,
            LayerSpec::Flatten => {
                let input = if i == 0 { &model.input_shape } else { &shapes[i - 1] };
                match reference {
                    Some(r) if input.len() == 3 => {
                        let hw = input[1] * input[2];
                        Some(r.into_iter().flat_map(|v| std::iter::repeat_n(v, hw)).collect())
                    }
                    other => other,
                }
            }
        };
    }
    Ok(reference)
}

fn stats(values: &[f32], is_dead: bool) -> ChannelStats {
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mean = values.iter().sum::<f32>() / values.len().max(1) as f32;
    ChannelStats { min, max, mean, is_dead }
}

/// Splits one layer output into maps: one per channel for `[C, H, W]`, or a
/// single `1 x n` map for flat outputs.
pub fn split_maps(output: &crate::tensor::Tensor, reference: Option<&[f32]>) -> Vec<FeatureMap> {
    let shape = output.shape();
    let data = output.data();
    let within = |v: f32, c: f32| (v - c).abs() <= DEAD_TOLERANCE;
    if shape.len() == 3 {
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        (0..c)
            .map(|ch| {
                let values = data[ch * h * w..(ch + 1) * h * w].to_vec();
                let dead = reference.is_some_and(|r| values.iter().all(|&v| within(v, r[ch])));
                FeatureMap {
                    channel: ch,
                    height: h,
                    width: w,
                    stats: stats(&values, dead),
                    values,
                }
            })
            .collect()
    } else {
        let values = data.to_vec();
        let dead = reference.is_some_and(|r| values.iter().zip(r).all(|(&v, &c)| within(v, c)));
        vec![FeatureMap {
            channel: 0,
            height: 1,
            width: values.len(),
            stats: stats(&values, dead),
            values,
        }]
    }
}

/// Feature maps of layer `layer_index` for one dataset sample.
pub fn feature_maps(
    session: &Session,
    sample_index: usize,
    layer_index: usize,
    variant: MaskVariant,
) -> Result<FeatureMaps> {
    let model = session.model();
    if layer_index >= model.layers.len() {
        return Err(Error::IndexOutOfRange {
            what: "layer",
            index: layer_index,
            len: model.layers.len(),
        });
    }
    let input = session.dataset().sample(sample_index)?;
    let masks = match variant {
        MaskVariant::Current => session.masks(),
        MaskVariant::Baseline => &session.baseline().masks,
    };
    let acts = engine::forward_all_activations(model, Some(masks), &input)?;
    let output = &acts[layer_index];
    let reference = dead_reference(model, layer_index)?;
    Ok(FeatureMaps {
        sample_index,
        layer_index,
        variant,
        output_shape: output.shape().to_vec(),
        maps: split_maps(output, reference.as_deref()),
    })
}

/// The weighted layer whose output channels a feature map of `layer_index`
/// shows: the layer itself, or the nearest weighted layer before it when only
/// relu / maxpool layers sit in between.
pub fn producer_layer(model: &Model, layer_index: usize) -> Result<usize> {
    let mut i = layer_index;
    loop {
        match model.layers.get(i) {
            None => {
                return Err(Error::IndexOutOfRange {
                    what: "layer",
                    index: layer_index,
                    len: model.layers.len(),
                })
            }
            Some(l) if l.is_weighted() => return Ok(i),
            Some(LayerSpec::Relu | LayerSpec::Maxpool2d { .. }) if i > 0 => i -= 1,
            Some(_) => {
                return Err(Error::InvalidEdit {
                    index: 0,
                    message: format!("feature maps of layer {layer_index} do not map to one channel"),
                })
            }
        }
    }
}

/// Handles a click on channel `channel` of a feature map of `layer_index`:
/// returns (but does not apply) the prune or restore edit it toggles.
pub fn mark_channel_from_feature_map(session: &mut Session, layer_index: usize, channel: usize) -> Result<MaskEdit> {
    let producer = producer_layer(session.model(), layer_index)?;
    session.toggle_channel_mark(producer, channel)
}

/// Channels of convolution layers whose mean |activation| over the first
/// `samples` dataset samples falls in the bottom `fraction` (nearest rank) of
/// all convolution channels, plus any channel that is dead on every sample.
/// Activations are read after the relu that follows a layer, when present.
/// Returns `(layer, channel)` pairs sorted by layer then channel.
pub fn low_activation_channels(
    model: &Model,
    masks: &MaskSet,
    dataset: &Dataset,
    samples: usize,
    fraction: f64,
) -> Result<Vec<(usize, usize)>> {
    dataset.check_compatible(model)?;
    let n = samples.min(dataset.len());
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let masked = engine::apply_masks(model, masks)?;
    let conv: Vec<usize> = model
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Conv2d { .. }))
        .map(|(i, _)| i)
        .collect();
    let probe = |l: usize| match model.layers.get(l + 1) {
        Some(LayerSpec::Relu) => l + 1,
        _ => l,
    };
    let mut sums: Vec<Vec<f64>> = conv.iter().map(|&l| vec![0.0; model.layers[l].weight().map_or(0, |w| w.shape()[0])]).collect();
    let mut alive: Vec<Vec<bool>> = sums.iter().map(|s| vec![false; s.len()]).collect();
    for i in 0..n {
        let acts = engine::run_layers(&masked, &dataset.sample(i)?)?;
        for (k, &l) in conv.iter().enumerate() {
            let p = probe(l);
            let reference = dead_reference(&masked, p)?;
            for map in split_maps(&acts[p], reference.as_deref()) {
                sums[k][map.channel] += map.values.iter().map(|v| f64::from(v.abs())).sum::<f64>() / map.values.len() as f64;
                alive[k][map.channel] |= !map.stats.is_dead;
            }
        }
    }
    let mut ranked: Vec<(f64, usize, usize)> = conv
        .iter()
        .enumerate()
        .flat_map(|(k, &l)| sums[k].iter().enumerate().map(move |(c, &s)| (s / n as f64, l, c)))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let take = ((fraction * ranked.len() as f64).ceil() as usize).min(ranked.len());
    let mut out: Vec<(usize, usize)> = ranked[..take].iter().map(|&(_, l, c)| (l, c)).collect();
    for (k, &l) in conv.iter().enumerate() {
        out.extend(alive[k].iter().enumerate().filter(|(_, &a)| !a).map(|(c, _)| (l, c)));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
