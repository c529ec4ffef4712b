use serde::{Deserialize, Serialize};

use super::types::{Pixels, SemanticLayout};
use crate::error::{invalid, Result};

/// Dataset-level constants shared by data loading, networks and the service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub num_classes: usize,
    /// Square training resolution.
    pub image_size: usize,
    /// Channel widths of every network are divided by this factor.
    pub width_divisor: usize,
    /// Source images are 1:2 and are split into two mirrored squares.
    pub split_halves: bool,
}

impl DatasetProfile {
    pub fn ade20k() -> Self {
        Self {
            name: "ade20k".into(),
            num_classes: 150,
            image_size: 256,
            width_divisor: 1,
            split_halves: false,
        }
    }

    pub fn cityscapes() -> Self {
        Self {
            name: "cityscapes".into(),
            num_classes: 34,
            image_size: 256,
            width_divisor: 1,
            split_halves: true,
        }
    }

    /// 64×64 synthetic scenes with eight classes and 1/8-width networks.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            num_classes: 8,
            image_size: 64,
            width_divisor: 8,
            split_halves: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ade20k" => Ok(Self::ade20k()),
            "cityscapes" => Ok(Self::cityscapes()),
            "desk" => Ok(Self::desk()),
            other => Err(invalid(format!("unknown dataset profile '{other}'"))),
        }
    }

    pub fn palette(&self) -> Palette {
        Palette::generate(self.num_classes)
    }
}

/// One RGB colour per class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Palette {
    /// The bit-interleaved colormap commonly used for segmentation masks.
    pub fn generate(num_classes: usize) -> Self {
        let colors = (0..num_classes)
            .map(|class| {
                let mut c = class;
                let mut rgb = [0u8; 3];
                for shift in (0..8).rev() {
                    for (ch, v) in rgb.iter_mut().enumerate() {
                        *v |= (((c >> ch) & 1) as u8) << shift;
                    }
                    c >>= 3;
                }
                rgb
            })
            .collect();
        Self { colors }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colorize(&self, layout: &SemanticLayout) -> Result<image::RgbImage> {
        if layout.num_classes() > self.colors.len() {
            return Err(invalid("palette has fewer colours than the layout has classes"));
        }
        let raw = layout
            .labels()
            .iter()
            .flat_map(|&l| self.colors[l as usize])
            .collect();
        Ok(image::RgbImage::from_raw(layout.width() as u32, layout.height() as u32, raw)
            .expect("sized buffer"))
    }

    pub fn colorize_pixels(&self, layout: &SemanticLayout) -> Result<Pixels> {
        Ok(Pixels::from_rgb8(&self.colorize(layout)?))
    }
}
