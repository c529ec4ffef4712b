//! Split a 1:2 street view at the middle line into two squares (the left one
//! mirrored, so both extend rightward) and merge them back.

use super::types::ImageSample;
use crate::error::{invalid, Error, Result};

const LEFT_SUFFIX: &str = "#left";
const RIGHT_SUFFIX: &str = "#right";

pub fn cityscapes_split(sample: &ImageSample) -> Result<(ImageSample, ImageSample)> {
    sample.validate()?;
    let (h, w) = (sample.height(), sample.width());
    if h == 0 || w != 2 * h {
        return Err(invalid(format!("expected a 1:2 sample, got {h}x{w}")));
    }
    let left = ImageSample {
        pixels: sample.pixels.crop(0, 0, h, h)?.flip_horizontal(),
        layout: sample.layout.crop(0, 0, h, h)?.flip_horizontal(),
        mask: sample.mask.crop(0, 0, h, h)?.flip_horizontal(),
        source_id: format!("{}{LEFT_SUFFIX}", sample.source_id),
    };
    let right = ImageSample {
        pixels: sample.pixels.crop(0, h, h, h)?,
        layout: sample.layout.crop(0, h, h, h)?,
        mask: sample.mask.crop(0, h, h, h)?,
        source_id: format!("{}{RIGHT_SUFFIX}", sample.source_id),
    };
    Ok((left, right))
}

pub fn cityscapes_merge(left_flipped: &ImageSample, right: &ImageSample) -> Result<ImageSample> {
    left_flipped.validate()?;
    right.validate()?;
    let (h, w) = (left_flipped.height(), left_flipped.width());
    if h != w || right.height() != h || right.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "merge needs two equal squares, got {h}x{w} and {}x{}",
            right.height(),
            right.width()
        )));
    }
    let source_id = left_flipped
        .source_id
        .strip_suffix(LEFT_SUFFIX)
        .unwrap_or(&left_flipped.source_id)
        .to_string();
    ImageSample::new(
        left_flipped.pixels.flip_horizontal().hconcat(&right.pixels)?,
        left_flipped.layout.flip_horizontal().hconcat(&right.layout)?,
        left_flipped.mask.flip_horizontal().hconcat(&right.mask)?,
        source_id,
    )
}
