//! Binary PGM (P5) rendering of masks: one byte per mask-view cell.

use vinnpruner_core::prune::MaskLayout;
use vinnpruner_core::PruneMask;

pub const KEPT: u8 = 255;
pub const PRUNED: u8 = 0;

/// `P5` image of `layout.cols` x `layout.rows`, pixel `(r, c)` showing cell `(r, c)`.
pub fn mask_pgm(mask: &PruneMask, layout: &MaskLayout) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", layout.cols, layout.rows).into_bytes();
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            out.push(if mask.is_kept(layout.flat_of(r, c)) { KEPT } else { PRUNED });
        }
    }
    out
}

/// Parsed P5 image: `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(pos + 1..)?.to_vec();
    (pixels.len() == w * h).then_some((w, h, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_is_all_white() {
        let mask = PruneMask::ones(0, vec![10, 5]);
        let layout = MaskLayout::for_shape(&[10, 5]).unwrap();
        let bytes = mask_pgm(&mask, &layout);
        assert!(bytes.starts_with(b"P5\n5 10\n255\n"));
        let (w, h, px) = parse_pgm(&bytes).unwrap();
        assert_eq!((w, h), (5, 10));
        assert!(px.iter().all(|&p| p == KEPT));
    }

    #[test]
    fn pruned_cells_are_dark() {
        let mut mask = PruneMask::ones(0, vec![2, 1, 3, 3]);
        for k in 9..18 {
            mask.set(k, false);
        }
        let layout = MaskLayout::for_shape(mask.shape()).unwrap();
        let (w, h, px) = parse_pgm(&mask_pgm(&mask, &layout)).unwrap();
        assert_eq!((w, h), (9, 2));
        assert!(px[..9].iter().all(|&p| p == KEPT));
        assert!(px[9..].iter().all(|&p| p == PRUNED));
    }
}
