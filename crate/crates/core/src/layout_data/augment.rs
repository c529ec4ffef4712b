//! Resize + random crop + random horizontal flip, applied to pixels, layout
//! and mask in lockstep.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::Grid;
use super::types::{BinaryMask, ImageSample, Pixels, SemanticLayout};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Square size the sample is resized to before cropping.
    pub load_size: usize,
    pub crop_size: usize,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            load_size: 286,
            crop_size: 256,
            flip_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Keeps the 286:256 load/crop ratio for other training resolutions.
    pub fn for_crop(crop_size: usize) -> Self {
        Self {
            load_size: ((crop_size as f64) * 286.0 / 256.0).round() as usize,
            crop_size,
            flip_probability: 0.5,
        }
    }

    /// Number of distinct crop origins along one axis.
    pub fn crop_positions(&self) -> usize {
        self.load_size - self.crop_size + 1
    }
}

/// Concrete draw of the random augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentParams {
    pub crop_y: usize,
    pub crop_x: usize,
    pub flip: bool,
}

impl AugmentParams {
    pub fn sample(config: &AugmentConfig, seed: u64) -> Result<Self> {
        if config.crop_size == 0 || config.load_size < config.crop_size {
            return Err(invalid(format!(
                "crop {} does not fit in load size {}",
                config.crop_size, config.load_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = config.crop_positions();
        Ok(Self {
            crop_y: rng.random_range(0..positions),
            crop_x: rng.random_range(0..positions),
            flip: rng.random::<f64>() < config.flip_probability,
        })
    }
}

pub fn augment(sample: &ImageSample, config: &AugmentConfig, seed: u64) -> Result<ImageSample> {
    let params = AugmentParams::sample(config, seed)?;
    augment_with(sample, config, params)
}

pub fn augment_with(
    sample: &ImageSample,
    config: &AugmentConfig,
    params: AugmentParams,
) -> Result<ImageSample> {
    sample.validate()?;
    let (load, crop) = (config.load_size, config.crop_size);
    if params.crop_x + crop > load || params.crop_y + crop > load {
        return Err(invalid("crop origin outside the resized sample"));
    }
    let pixels = resize_pixels(&sample.pixels, load, load).crop(params.crop_y, params.crop_x, crop, crop)?;
    let layout = resize_layout(&sample.layout, load, load)?.crop(params.crop_y, params.crop_x, crop, crop)?;
    let mask = resize_mask(&sample.mask, load, load).crop(params.crop_y, params.crop_x, crop, crop)?;
    let out = ImageSample::new(pixels, layout, mask, sample.source_id.clone())?;
    Ok(if params.flip { flip_sample(&out) } else { out })
}

pub fn flip_sample(sample: &ImageSample) -> ImageSample {
    ImageSample {
        pixels: sample.pixels.flip_horizontal(),
        layout: sample.layout.flip_horizontal(),
        mask: sample.mask.flip_horizontal(),
        source_id: sample.source_id.clone(),
    }
}

/// Bilinear resize.
pub fn resize_pixels(pixels: &Pixels, height: usize, width: usize) -> Pixels {
    if pixels.height() == height && pixels.width() == width {
        return pixels.clone();
    }
    // The f32 resampler clamps to [0, 1], so shift the range around the call.
    let unit: Vec<f32> = pixels.data().iter().map(|v| (v + 1.0) * 0.5).collect();
    let img: ImageBuffer<Rgb<f32>, Vec<f32>> =
        ImageBuffer::from_raw(pixels.width() as u32, pixels.height() as u32, unit)
            .expect("buffer length matches dimensions");
    let resized = imageops::resize(&img, width as u32, height as u32, FilterType::Triangle);
    Pixels(Grid {
        height,
        width,
        channels: 3,
        data: resized
            .into_raw()
            .into_iter()
            .map(|v| (v * 2.0 - 1.0).clamp(-1.0, 1.0))
            .collect(),
    })
}

/// Nearest-neighbour resize; labels are never blended.
pub fn resize_layout(layout: &SemanticLayout, height: usize, width: usize) -> Result<SemanticLayout> {
    if layout.height() == height && layout.width() == width {
        return Ok(layout.clone());
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        layout.width() as u32,
        layout.height() as u32,
        layout.labels().to_vec(),
    )
    .expect("buffer length matches dimensions");
    let resized = imageops::resize(&img, width as u32, height as u32, FilterType::Nearest);
    SemanticLayout::new(height, width, resized.into_raw(), layout.num_classes())
}

pub fn resize_mask(mask: &BinaryMask, height: usize, width: usize) -> BinaryMask {
    if mask.height() == height && mask.width() == width {
        return mask.clone();
    }
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, mask.values().to_vec())
            .expect("buffer length matches dimensions");
    let resized = imageops::resize(&img, width as u32, height as u32, FilterType::Nearest);
    BinaryMask(Grid {
        height,
        width,
        channels: 1,
        data: resized.into_raw(),
    })
}
