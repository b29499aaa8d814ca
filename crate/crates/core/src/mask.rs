//! Binary pruning masks, their packed-bit encoding and run-length transfer form.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::numel;

/// Keep/prune bits for one weighted layer, congruent to its weight tensor.
/// `true` keeps the weight, `false` prunes it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PruneMask {
    pub layer_index: usize,
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn ones(layer_index: usize, shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            layer_index,
            shape,
            bits: vec![true; n],
        }
    }

    pub fn from_bits(layer_index: usize, shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        let expected = numel(&shape);
        if expected != bits.len() {
            return Err(Error::TensorLength {
                shape,
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            layer_index,
            shape,
            bits,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_kept(&self, flat: usize) -> bool {
        self.bits[flat]
    }

    pub fn set(&mut self, flat: usize, keep: bool) {
        self.bits[flat] = keep;
    }

    pub fn kept_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.len() - self.kept_count()
    }

    /// Size of one leading-axis slice (an output channel or dense row).
    pub fn channel_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn num_channels(&self) -> usize {
        self.shape[0]
    }

    pub fn channel_fully_pruned(&self, channel: usize) -> bool {
        let len = self.channel_len();
        self.bits[channel * len..(channel + 1) * len].iter().all(|&b| !b)
    }

    /// Output channels (rows) whose every weight is pruned.
    pub fn fully_pruned_channels(&self) -> Vec<usize> {
        (0..self.num_channels())
            .filter(|&c| self.channel_fully_pruned(c))
            .collect()
    }

    /// Packs bits in flat-index order, little-endian bit order within each byte,
    /// zero-padded to a byte boundary.
    pub fn pack(&self) -> Vec<u8> {
        pack_bits(&self.bits)
    }

    pub fn unpack(layer_index: usize, shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        let n = numel(&shape);
        let bits = unpack_bits(bytes, n)?;
        Self::from_bits(layer_index, shape, bits)
    }

    pub fn run_lengths(&self) -> RunLengths {
        RunLengths::encode(&self.bits)
    }
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

/// Inverse of [`pack_bits`]. Rejects wrong byte counts and non-zero padding bits.
pub fn unpack_bits(bytes: &[u8], n: usize) -> Result<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::InvalidMask(format!(
            "packed mask has {} bytes, {n} bits need {}",
            bytes.len(),
            n.div_ceil(8)
        )));
    }
    if n % 8 != 0 {
        let tail = bytes[bytes.len() - 1] >> (n % 8);
        if tail != 0 {
            return Err(Error::InvalidMask("packed mask has non-zero padding bits".into()));
        }
    }
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

/// Alternating runs over the flat bit sequence, starting with `first`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengths {
    pub first: u8,
    pub runs: Vec<usize>,
}

impl RunLengths {
    pub fn encode(bits: &[bool]) -> Self {
        let first = bits.first().copied().unwrap_or(true);
        let mut runs = Vec::new();
        let mut current = first;
        let mut len = 0;
        for &b in bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        if len > 0 {
            runs.push(len);
        }
        Self {
            first: first as u8,
            runs,
        }
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut value = self.first == 1;
        let mut out = Vec::with_capacity(self.runs.iter().sum());
        for &len in &self.runs {
            out.extend(std::iter::repeat_n(value, len));
            value = !value;
        }
        out
    }
}

/// One mask per weighted layer of a model, ordered by layer index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskSet {
    masks: Vec<PruneMask>,
}

impl MaskSet {
    pub fn all_ones(model: &Model) -> Self {
        let masks = model
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.weight().map(|w| PruneMask::ones(i, w.shape().to_vec())))
            .collect();
        Self { masks }
    }

    /// Builds a set and checks it is congruent with `model`.
    pub fn new(model: &Model, mut masks: Vec<PruneMask>) -> Result<Self> {
        masks.sort_by_key(|m| m.layer_index);
        let set = Self { masks };
        set.check_congruent(model)?;
        Ok(set)
    }

    pub fn check_congruent(&self, model: &Model) -> Result<()> {
        let weighted = model.weighted_layers();
        if weighted.len() != self.masks.len() {
            return Err(Error::InvalidMask(format!(
                "{} masks given for {} weighted layers",
                self.masks.len(),
                weighted.len()
            )));
        }
        for (mask, &layer) in self.masks.iter().zip(&weighted) {
            if mask.layer_index != layer {
                return Err(Error::NotWeighted(mask.layer_index));
            }
            let weight = model.layers[layer].weight().expect("weighted layer");
            if weight.shape() != mask.shape() {
                return Err(Error::MaskShape {
                    layer,
                    expected: weight.shape().to_vec(),
                    actual: mask.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, layer_index: usize) -> Option<&PruneMask> {
        self.masks.iter().find(|m| m.layer_index == layer_index)
    }

    pub fn get_mut(&mut self, layer_index: usize) -> Option<&mut PruneMask> {
        self.masks.iter_mut().find(|m| m.layer_index == layer_index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PruneMask> {
        self.masks.iter()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn total_pruned(&self) -> usize {
        self.masks.iter().map(PruneMask::pruned_count).sum()
    }

    pub fn total_weights(&self) -> usize {
        self.masks.iter().map(PruneMask::len).sum()
    }

    /// SHA-256 over every mask's layer index, shape and packed bits, as hex.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.masks {
            h.update((m.layer_index as u64).to_le_bytes());
            h.update((m.shape.len() as u64).to_le_bytes());
            for &d in &m.shape {
                h.update((d as u64).to_le_bytes());
            }
            h.update(m.pack());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl<'a> IntoIterator for &'a MaskSet {
    type Item = &'a PruneMask;
    type IntoIter = std::slice::Iter<'a, PruneMask>;

    fn into_iter(self) -> Self::IntoIter {
        self.masks.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn packs_little_endian_bits() {
        let bits: Vec<bool> = [1, 0, 1, 1, 0, 0, 0, 1, 1].iter().map(|&b| b == 1).collect();
        assert_eq!(pack_bits(&bits), vec![0x8D, 0x01]);
        assert_eq!(unpack_bits(&[0x8D, 0x01], 9).unwrap(), bits);
    }

    #[test]
    fn unpack_rejects_bad_lengths_and_padding() {
        assert!(unpack_bits(&[0xFF], 9).is_err());
        assert!(unpack_bits(&[0x00, 0x02], 9).is_err());
    }

    #[test]
    fn all_ones_is_single_run() {
        let mask = PruneMask::ones(0, vec![4, 2, 3, 3]);
        assert_eq!(
            mask.run_lengths(),
            RunLengths {
                first: 1,
                runs: vec![72]
            }
        );
    }

    #[test]
    fn fully_pruned_rows() {
        let mut mask = PruneMask::ones(2, vec![3, 2]);
        mask.set(2, false);
        mask.set(3, false);
        mask.set(4, false);
        assert_eq!(mask.fully_pruned_channels(), vec![1]);
        assert_eq!(mask.pruned_count(), 3);
    }

    proptest! {
        #[test]
        fn pack_then_unpack_is_identity(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let packed = pack_bits(&bits);
            let back = unpack_bits(&packed, bits.len()).unwrap();
            prop_assert_eq!(&back, &bits);
            prop_assert_eq!(pack_bits(&back), packed);
        }

        #[test]
        fn run_lengths_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let rle = RunLengths::encode(&bits);
            prop_assert_eq!(rle.runs.iter().sum::<usize>(), bits.len());
            prop_assert_eq!(rle.decode(), bits);
        }
    }
}
