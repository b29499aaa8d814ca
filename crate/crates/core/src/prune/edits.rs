//! Manual mask edits: index brushes, whole channels and mask-view rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::model::Model;
use crate::prune::layout::MaskLayout;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    PruneIndices { indices: Vec<usize> },
    RestoreIndices { indices: Vec<usize> },
    /// Conv out-channel `[c, :, :, :]` or dense row `c`.
    PruneChannel { channel: usize },
    RestoreChannel { channel: usize },
    /// Inclusive `[row0, col0, row1, col1]` in mask-view cell coordinates.
    PruneRect { rect: [usize; 4] },
    RestoreRect { rect: [usize; 4] },
}

impl EditOp {
    pub fn keeps(&self) -> bool {
        matches!(
            self,
            EditOp::RestoreIndices { .. } | EditOp::RestoreChannel { .. } | EditOp::RestoreRect { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEdit {
    pub layer_index: usize,
    #[serde(flatten)]
    pub op: EditOp,
}

impl MaskEdit {
    pub fn new(layer_index: usize, op: EditOp) -> Self {
        Self { layer_index, op }
    }

    /// Flat weight indices touched by this edit, bounds-checked against `model`.
    pub fn cells(&self, model: &Model) -> std::result::Result<Vec<usize>, String> {
        let layer = model
            .layers
            .get(self.layer_index)
            .ok_or_else(|| format!("layer {} does not exist", self.layer_index))?;
        let weight = layer
            .weight()
            .ok_or_else(|| format!("layer {} is not a weighted layer", self.layer_index))?;
        let n = weight.len();
        let channels = weight.shape()[0];
        let slice = n / channels;
        match &self.op {
            EditOp::PruneIndices { indices } | EditOp::RestoreIndices { indices } => {
                if let Some(bad) = indices.iter().find(|&&i| i >= n) {
                    return Err(format!("index {bad} out of range for {n} weights"));
                }
                Ok(indices.clone())
            }
            EditOp::PruneChannel { channel } | EditOp::RestoreChannel { channel } => {
                if *channel >= channels {
                    return Err(format!("channel {channel} out of range for {channels} channels"));
                }
                Ok((channel * slice..(channel + 1) * slice).collect())
            }
            EditOp::PruneRect { rect } | EditOp::RestoreRect { rect } => {
                let layout = MaskLayout::for_shape(weight.shape()).map_err(|e| e.to_string())?;
                layout.rect_cells(*rect).map_err(|e| e.to_string())
            }
        }
    }
}

/// Applies `edits` in order to a copy of `masks`. Any invalid edit rejects the
/// whole batch and leaves nothing applied.
pub fn apply_edits(model: &Model, masks: &MaskSet, edits: &[MaskEdit]) -> Result<MaskSet> {
    let resolved = edits
        .iter()
        .enumerate()
        .map(|(index, edit)| {
            edit.cells(model)
                .map(|cells| (edit, cells))
                .map_err(|message| Error::InvalidEdit { index, message })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut next = masks.clone();
    for (edit, cells) in resolved {
        let mask = next
            .get_mut(edit.layer_index)
            .ok_or(Error::NotWeighted(edit.layer_index))?;
        let keep = edit.op.keeps();
        for i in cells {
            mask.set(i, keep);
        }
    }
    Ok(next)
}
