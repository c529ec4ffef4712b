//! Raster codecs: single-channel PNG label maps (class index = pixel value)
//! and RGB images.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::types::{Pixels, SemanticLayout};
use crate::error::{invalid, Result};

/// Decodes an 8- or 16-bit single-channel label map.
pub fn decode_label_map(bytes: &[u8], num_classes: usize) -> Result<SemanticLayout> {
    let img = image::load_from_memory(bytes)?;
    label_map_from_image(img, num_classes)
}

pub fn read_label_map(path: &Path, num_classes: usize) -> Result<SemanticLayout> {
    let img = image::open(path)?;
    label_map_from_image(img, num_classes)
}

fn label_map_from_image(img: DynamicImage, num_classes: usize) -> Result<SemanticLayout> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u16> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        other => {
            return Err(invalid(format!(
                "label map must be single-channel 8 or 16 bit, got {:?}",
                other.color()
            )))
        }
    };
    SemanticLayout::new(h, w, labels, num_classes)
}

/// PNG label map; 8-bit when every class fits, 16-bit otherwise.
pub fn encode_label_map(layout: &SemanticLayout) -> Result<Vec<u8>> {
    let (w, h) = (layout.width() as u32, layout.height() as u32);
    let img = if layout.num_classes() <= 256 {
        let raw = layout.labels().iter().map(|&l| l as u8).collect();
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, raw).expect("sized buffer"))
    } else {
        DynamicImage::ImageLuma16(
            image::ImageBuffer::from_raw(w, h, layout.labels().to_vec()).expect("sized buffer"),
        )
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_rgb(bytes: &[u8]) -> Result<Pixels> {
    Ok(Pixels::from_rgb8(&image::load_from_memory(bytes)?.to_rgb8()))
}

pub fn read_rgb(path: &Path) -> Result<Pixels> {
    Ok(Pixels::from_rgb8(&image::open(path)?.to_rgb8()))
}

pub fn encode_rgb(pixels: &Pixels) -> Result<Vec<u8>> {
    encode_rgb8(&pixels.to_rgb8())
}

pub fn encode_rgb8(img: &image::RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_rgb(path: &Path, pixels: &Pixels) -> Result<()> {
    pixels.to_rgb8().save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn write_label_map(path: &Path, layout: &SemanticLayout) -> Result<()> {
    std::fs::write(path, encode_label_map(layout)?)?;
    Ok(())
}
