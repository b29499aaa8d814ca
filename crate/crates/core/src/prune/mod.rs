//! Magnitude and lookahead pruning, manual edits and the mask-view layout.

mod edits;
mod layout;
mod ratio;
mod scores;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use edits::{apply_edits, EditOp, MaskEdit};
pub use layout::MaskLayout;
pub use ratio::{prune_by_ratio, prune_count};
pub use scores::{lap_scores, map_scores, LapMode};

use crate::error::{Error, FieldError, Result};
use crate::mask::MaskSet;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Map,
    Lap,
    LapForward,
    LapBackward,
    /// Steps produced by hand edits (and the baseline).
    Manual,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Map => "map",
            Algorithm::Lap => "lap",
            Algorithm::LapForward => "lap_forward",
            Algorithm::LapBackward => "lap_backward",
            Algorithm::Manual => "manual",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "map" => Ok(Algorithm::Map),
            "lap" => Ok(Algorithm::Lap),
            "lap_forward" => Ok(Algorithm::LapForward),
            "lap_backward" => Ok(Algorithm::LapBackward),
            "manual" => Ok(Algorithm::Manual),
            other => Err(format!("unknown algorithm '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSettings {
    pub algorithm: Algorithm,
    pub global_ratio: f64,
    /// Per-layer overrides of `global_ratio`, keyed by weighted layer index.
    #[serde(default)]
    pub per_layer_ratio: BTreeMap<usize, f64>,
}

impl PruneSettings {
    pub fn new(algorithm: Algorithm, global_ratio: f64) -> Self {
        Self {
            algorithm,
            global_ratio,
            per_layer_ratio: BTreeMap::new(),
        }
    }

    /// The defaults offered to users before they pick their own values.
    pub fn suggested() -> Self {
        Self::new(Algorithm::Lap, 0.5)
    }

    pub(crate) fn manual() -> Self {
        Self::new(Algorithm::Manual, 0.0)
    }

    pub fn with_layer_ratio(mut self, layer: usize, ratio: f64) -> Self {
        self.per_layer_ratio.insert(layer, ratio);
        self
    }

    pub fn ratio_for(&self, layer: usize) -> f64 {
        self.per_layer_ratio
            .get(&layer)
            .copied()
            .unwrap_or(self.global_ratio)
    }

    /// Collects every invalid field rather than stopping at the first.
    pub fn validate(&self, model: &Model) -> Result<()> {
        let mut errors = Vec::new();
        let bad_ratio = |r: f64| !r.is_finite() || !(0.0..=1.0).contains(&r);
        if self.algorithm == Algorithm::Manual {
            errors.push(FieldError::new(
                "algorithm",
                "manual steps are created through mask edits",
            ));
        }
        if bad_ratio(self.global_ratio) {
            errors.push(FieldError::new(
                "global_ratio",
                format!("{} is outside [0, 1]", self.global_ratio),
            ));
        }
        let weighted = model.weighted_layers();
        for (&layer, &ratio) in &self.per_layer_ratio {
            let field = format!("per_layer_ratio.{layer}");
            if !weighted.contains(&layer) {
                errors.push(FieldError::new(&field, format!("layer {layer} is not a weighted layer")));
            }
            if bad_ratio(ratio) {
                errors.push(FieldError::new(&field, format!("{ratio} is outside [0, 1]")));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSettings(errors))
        }
    }
}

impl Default for PruneSettings {
    fn default() -> Self {
        Self::suggested()
    }
}

/// Scores for one weighted layer under `algorithm`, against `masks`.
pub fn layer_scores(model: &Model, masks: &MaskSet, layer: usize, algorithm: Algorithm) -> Result<Tensor> {
    let weight = model.weighted_layer(layer)?.weight().expect("weighted");
    match algorithm {
        Algorithm::Map => Ok(map_scores(weight)),
        Algorithm::Lap => lap_scores(model, masks, layer, LapMode::Both),
        Algorithm::LapForward => lap_scores(model, masks, layer, LapMode::Forward),
        Algorithm::LapBackward => lap_scores(model, masks, layer, LapMode::Backward),
        Algorithm::Manual => Err(Error::InvalidSettings(vec![FieldError::new(
            "algorithm",
            "manual has no scores",
        )])),
    }
}

/// Masks after one algorithmic step. All scores are computed against the masks
/// as they were at the start of the step.
pub fn prune_step_masks(model: &Model, masks: &MaskSet, settings: &PruneSettings) -> Result<MaskSet> {
    settings.validate(model)?;
    let mut next = masks.clone();
    for layer in model.weighted_layers() {
        let scores = layer_scores(model, masks, layer, settings.algorithm)?;
        let current = masks.get(layer).ok_or(Error::NotWeighted(layer))?;
        let pruned = prune_by_ratio(&scores, current, settings.ratio_for(layer))?;
        *next.get_mut(layer).expect("same layers") = pruned;
    }
    Ok(next)
}
