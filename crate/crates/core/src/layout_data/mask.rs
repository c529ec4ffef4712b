use candle_core::{DType, Tensor};

use super::grid::Grid;
use super::types::{BinaryMask, ImageSample, MaskedLayout, Pixels};
use crate::error::{invalid, Result};

/// Number of known (left) columns for a right-side mask: `round(width * (1 - fraction))`.
pub fn known_columns(width: usize, masked_fraction: f64) -> usize {
    ((width as f64) * (1.0 - masked_fraction)).round() as usize
}

/// Mask whose rightmost `masked_fraction` of columns are unknown.
pub fn make_right_mask(height: usize, width: usize, masked_fraction: f64) -> Result<BinaryMask> {
    if height == 0 || width == 0 {
        return Err(invalid(format!("mask dimensions must be positive, got {height}x{width}")));
    }
    if !(masked_fraction > 0.0 && masked_fraction < 1.0) {
        return Err(invalid(format!(
            "masked fraction must lie in (0, 1), got {masked_fraction}"
        )));
    }
    Ok(mask_with_known_columns(height, width, known_columns(width, masked_fraction)))
}

/// Mask whose leftmost `known` columns are known.
pub fn mask_with_known_columns(height: usize, width: usize, known: usize) -> BinaryMask {
    let mut values = Vec::with_capacity(height * width);
    for _ in 0..height {
        values.extend((0..width).map(|x| u8::from(x < known)));
    }
    BinaryMask(Grid {
        height,
        width,
        channels: 1,
        data: values,
    })
}

/// `pixels ⊙ mask` and the layout restricted to the known region.
///
/// Known pixels are copied, so the known region of both outputs is bit-identical
/// to the input.
pub fn apply_mask(sample: &ImageSample) -> Result<(Pixels, MaskedLayout)> {
    sample.validate()?;
    Ok((
        mask_pixels(&sample.pixels, &sample.mask)?,
        MaskedLayout::new(&sample.layout, &sample.mask)?,
    ))
}

pub fn mask_pixels(pixels: &Pixels, mask: &BinaryMask) -> Result<Pixels> {
    if pixels.height() != mask.height() || pixels.width() != mask.width() {
        return Err(invalid("mask and image extents differ"));
    }
    let mut out = pixels.clone();
    for (px, &m) in out.0.data.chunks_exact_mut(3).zip(mask.values()) {
        if m == 0 {
            px.fill(0.0);
        }
    }
    Ok(out)
}

/// `(1 − M) ⊙ generated + M ⊙ known`, implemented as a per-pixel select so the
/// known region is reproduced exactly.
pub fn composite_pixels(generated: &Pixels, known: &Pixels, mask: &BinaryMask) -> Result<Pixels> {
    if generated.0.same_extent(&known.0) && known.0.same_extent(&mask.0) {
        let mut out = generated.clone();
        for ((o, k), &m) in out
            .0
            .data
            .chunks_exact_mut(3)
            .zip(known.data().chunks_exact(3))
            .zip(mask.values())
        {
            if m == 1 {
                o.copy_from_slice(k);
            }
        }
        Ok(out)
    } else {
        Err(invalid("composite inputs have different extents"))
    }
}

/// Tensor form of the compositing rule. `mask` is `(N, 1, H, W)` with 1 for
/// known pixels (any dtype); it is broadcast over the channel axis.
/// Gradients reach `generated` only through the unknown region.
pub fn composite_tensor(generated: &Tensor, known: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if generated.dims() != known.dims() {
        return Err(invalid(format!(
            "generated {:?} and known {:?} differ",
            generated.dims(),
            known.dims()
        )));
    }
    let select = mask.to_dtype(DType::U8)?.broadcast_as(generated.shape())?;
    Ok(select.where_cond(known, generated)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout_data::SemanticLayout;

    fn known_cols(m: &BinaryMask) -> usize {
        (0..m.width()).filter(|&x| m.is_known(0, x)).count()
    }

    #[test]
    fn quarter_and_half_masks_at_256() {
        let m = make_right_mask(256, 256, 0.25).unwrap();
        assert_eq!(known_cols(&m), 192);
        assert!(m.is_known(0, 191) && !m.is_known(0, 192) && !m.is_known(255, 255));
        let m = make_right_mask(256, 256, 0.5).unwrap();
        assert_eq!(known_cols(&m), 128);
        assert!(m.is_known(17, 127) && !m.is_known(17, 128));
    }

    #[test]
    fn tiny_mask() {
        let m = make_right_mask(4, 4, 0.25).unwrap();
        assert_eq!(known_cols(&m), 3);
        assert_eq!(m.known_count(), 12);
    }

    #[test]
    fn rows_are_prefix_of_ones() {
        let m = make_right_mask(7, 13, 0.4).unwrap();
        for y in 0..7 {
            let row = &m.values()[y * 13..(y + 1) * 13];
            let ones = row.iter().take_while(|&&v| v == 1).count();
            assert!(row[ones..].iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_right_mask(0, 4, 0.25).is_err());
        assert!(make_right_mask(4, 0, 0.25).is_err());
        assert!(make_right_mask(4, 4, 0.0).is_err());
        assert!(make_right_mask(4, 4, 1.0).is_err());
    }

    #[test]
    fn one_by_two_masking() {
        let px = Pixels::new(1, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let l = SemanticLayout::new(1, 2, vec![1, 1], 2).unwrap();
        let m = BinaryMask::new(1, 2, vec![1, 0]).unwrap();
        let s = ImageSample::new(px, l, m, "t").unwrap();
        let (p, ml) = apply_mask(&s).unwrap();
        assert_eq!(p.data(), &[0.1, 0.2, 0.3, 0.0, 0.0, 0.0]);
        assert_eq!(ml.one_hot_planes(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn all_ones_and_all_zeros() {
        let px = Pixels::new(1, 2, vec![0.1, -0.2, 0.3, 0.4, 0.5, -1.0]).unwrap();
        let l = SemanticLayout::new(1, 2, vec![0, 1], 2).unwrap();
        let s = ImageSample::new(px.clone(), l.clone(), BinaryMask::all_known(1, 2), "t").unwrap();
        let (p, ml) = apply_mask(&s).unwrap();
        assert_eq!(p, px);
        assert_eq!(ml.one_hot_planes(), l.one_hot_planes());

        let s = s.with_mask(BinaryMask::all_unknown(1, 2)).unwrap();
        let (p, ml) = apply_mask(&s).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
        assert!(ml.one_hot_planes().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let px = Pixels::zeros(2, 2);
        assert!(mask_pixels(&px, &BinaryMask::all_known(2, 3)).is_err());
    }
}
