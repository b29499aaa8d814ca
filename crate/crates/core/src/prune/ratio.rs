use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::tensor::Tensor;

/// Number of additional weights a ratio prunes out of `unpruned` survivors.
pub fn prune_count(ratio: f64, unpruned: usize) -> usize {
    (ratio * unpruned as f64).floor() as usize
}

/// Prunes `floor(ratio * unpruned)` more weights: the smallest-scoring survivors,
/// ties going to the lower flat index. Already-pruned weights stay pruned.
pub fn prune_by_ratio(scores: &Tensor, current: &PruneMask, ratio: f64) -> Result<PruneMask> {
    if scores.shape() != current.shape() {
        return Err(Error::MaskShape {
            layer: current.layer_index,
            expected: current.shape().to_vec(),
            actual: scores.shape().to_vec(),
        });
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidSettings(vec![crate::error::FieldError::new(
            "ratio",
            format!("{ratio} is outside [0, 1]"),
        )]));
    }
    let values = scores.data();
    let mut survivors: Vec<usize> = (0..current.len()).filter(|&i| current.is_kept(i)).collect();
    let k = prune_count(ratio, survivors.len());
    let mut next = current.clone();
    if k == 0 {
        return Ok(next);
    }
    let by_score = |a: &usize, b: &usize| values[*a].total_cmp(&values[*b]).then(a.cmp(b));
    if k < survivors.len() {
        survivors.select_nth_unstable_by(k - 1, by_score);
    }
    for &i in &survivors[..k] {
        next.set(i, false);
    }
    Ok(next)
}
