//! 2-D mask-view geometry shared by the mask endpoint, rectangle edits and PGM export.
//!
//! Every weighted layer is shown as a grid with one row per output channel (or
//! dense output unit). A conv row holds `in_ch` kernel blocks left to right, each
//! block being the `kh * kw` cells of one kernel in row-major order, so the grid is
//! `[out_ch, in_ch * kh * kw]` and cell `(r, c)` is flat weight index
//! `r * cols + c`. A dense layer is simply its `[out_units, in_units]` matrix.
//!
//! For drawing, a block can be folded back into a `kh x kw` square; the
//! `pixel_*` fields describe that folded picture, where channel `r` spans pixel
//! rows `r * kh .. (r + 1) * kh`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskLayout {
    pub kind: LayerKind,
    pub weight_shape: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    /// Cells per kernel block (`kh * kw` for conv, 1 for dense).
    pub block_cells: usize,
    /// Kernel blocks per row (`in_ch` for conv, `in_units` for dense).
    pub blocks_per_row: usize,
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub pixel_rows: usize,
    pub pixel_cols: usize,
    /// `[first, last]` pixel rows (inclusive) spanned by each channel row.
    pub channel_pixel_rows: Vec<[usize; 2]>,
}

impl MaskLayout {
    pub fn for_layer(layer: &LayerSpec) -> Result<Self> {
        let weight = layer.weight().ok_or(Error::InvalidLayer {
            layer: 0,
            message: format!("{:?} layers have no mask", layer.kind()),
        })?;
        Self::for_shape(weight.shape())
    }

    /// Layout for a weight shape: rank 2 is dense, rank 4 is conv2d.
    pub fn for_shape(shape: &[usize]) -> Result<Self> {
        let (kind, kh, kw) = match shape.len() {
            2 => (LayerKind::Dense, 1, 1),
            4 => (LayerKind::Conv2d, shape[2], shape[3]),
            _ => {
                return Err(Error::InvalidMask(format!(
                    "no mask layout for weight shape {shape:?}"
                )))
            }
        };
        let (out, inp) = (shape[0], shape[1]);
        Ok(Self {
            kind,
            weight_shape: shape.to_vec(),
            rows: out,
            cols: inp * kh * kw,
            block_cells: kh * kw,
            blocks_per_row: inp,
            kernel_height: kh,
            kernel_width: kw,
            pixel_rows: out * kh,
            pixel_cols: inp * kw,
            channel_pixel_rows: (0..out).map(|r| [r * kh, r * kh + kh - 1]).collect(),
        })
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_of(&self, flat: usize) -> (usize, usize) {
        (flat / self.cols, flat % self.cols)
    }

    pub fn flat_of(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Position of a flat weight in the folded (square-kernel) picture.
    pub fn pixel_of(&self, flat: usize) -> (usize, usize) {
        let (row, col) = self.cell_of(flat);
        let block = col / self.block_cells;
        let within = col % self.block_cells;
        (
            row * self.kernel_height + within / self.kernel_width,
            block * self.kernel_width + within % self.kernel_width,
        )
    }

    /// Flat indices of all cells inside an inclusive rectangle.
    pub fn rect_cells(&self, rect: [usize; 4]) -> Result<Vec<usize>> {
        let [r0, c0, r1, c1] = rect;
        if r0 > r1 || c0 > c1 || r1 >= self.rows || c1 >= self.cols {
            return Err(Error::InvalidMask(format!(
                "rectangle {rect:?} outside the {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok((r0..=r1)
            .flat_map(|r| (c0..=c1).map(move |c| r * self.cols + c))
            .collect())
    }
}
