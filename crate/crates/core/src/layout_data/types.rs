use candle_core::{DType, Device, Tensor};

use super::grid::Grid;
use crate::error::{invalid, Error, Result};

/// RGB image normalized to `[-1, 1]`, stored row-major as H×W×3.
#[derive(Clone, Debug, PartialEq)]
pub struct Pixels(pub(crate) Grid<f32>);

impl Pixels {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{}x3 = {} values, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(invalid(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self(Grid {
            height,
            width,
            channels: 3,
            data,
        }))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 3, 0.0))
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let c = self.0.cell(y, x);
        [c[0], c[1], c[2]]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self(self.0.flip_horizontal())
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        check_crop(self.height(), self.width(), y0, x0, height, width)?;
        Ok(Self(self.0.crop(y0, x0, height, width)))
    }

    pub fn hconcat(&self, right: &Self) -> Result<Self> {
        if self.height() != right.height() {
            return Err(Error::ShapeMismatch("heights differ".into()));
        }
        Ok(Self(self.0.hconcat(&right.0)))
    }

    /// 8-bit RGB to `[-1, 1]` via `v / 127.5 - 1`.
    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0).collect();
        Self(Grid {
            height: img.height() as usize,
            width: img.width() as usize,
            channels: 3,
            data,
        })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data()
            .iter()
            .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width() as u32, self.height() as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// CHW tensor of shape `(3, H, W)`.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(self.data(), (self.height(), self.width(), 3), device)?;
        Ok(t.permute((2, 0, 1))?.contiguous()?.to_dtype(dtype)?)
    }

    /// Inverse of [`Pixels::to_tensor`]. Values are clamped into `[-1, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("expected 3 channels, got {c}")));
        }
        let data: Vec<f32> = t
            .to_dtype(DType::F32)?
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_vec1()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite generator output"));
        }
        Ok(Self(Grid {
            height: h,
            width: w,
            channels: 3,
            data: data.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        }))
    }
}

/// Per-pixel class labels in `[0, num_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticLayout {
    pub(crate) grid: Grid<u16>,
    num_classes: usize,
}

impl SemanticLayout {
    pub fn new(height: usize, width: usize, labels: Vec<u16>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > u16::MAX as usize + 1 {
            return Err(invalid(format!("unsupported class count {num_classes}")));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::ClassOutOfRange {
                index: l as u32,
                num_classes,
            });
        }
        Ok(Self {
            grid: Grid {
                height,
                width,
                channels: 1,
                data: labels,
            },
            num_classes,
        })
    }

    pub fn filled(height: usize, width: usize, class: u16, num_classes: usize) -> Result<Self> {
        Self::new(height, width, vec![class; height * width], num_classes)
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.grid.data
    }

    pub fn label(&self, y: usize, x: usize) -> u16 {
        self.grid.data[y * self.grid.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            grid: self.grid.flip_horizontal(),
            num_classes: self.num_classes,
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        check_crop(self.height(), self.width(), y0, x0, height, width)?;
        Ok(Self {
            grid: self.grid.crop(y0, x0, height, width),
            num_classes: self.num_classes,
        })
    }

    pub fn hconcat(&self, right: &Self) -> Result<Self> {
        if self.height() != right.height() || self.num_classes != right.num_classes {
            return Err(Error::ShapeMismatch("layouts cannot be concatenated".into()));
        }
        Ok(Self {
            grid: self.grid.hconcat(&right.grid),
            num_classes: self.num_classes,
        })
    }

    /// `C×H×W` one-hot planes, flattened channel-major.
    pub fn one_hot_planes(&self) -> Vec<f32> {
        let hw = self.height() * self.width();
        let mut planes = vec![0.0; self.num_classes * hw];
        for (i, &l) in self.labels().iter().enumerate() {
            planes[l as usize * hw + i] = 1.0;
        }
        planes
    }

    /// One-hot tensor of shape `(C, H, W)`.
    pub fn one_hot(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_vec(
            self.one_hot_planes(),
            (self.num_classes, self.height(), self.width()),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Per-pixel argmax over the channel axis of a `(C, H, W)` tensor.
    /// Ties resolve to the lowest class index.
    pub fn argmax(scores: &Tensor) -> Result<Self> {
        let (c, h, w) = scores.dims3()?;
        let labels: Vec<u32> = scores.argmax(0)?.flatten_all()?.to_vec1()?;
        Self::new(h, w, labels.into_iter().map(|l| l as u16).collect(), c)
    }

    /// Argmax over flattened one-hot planes, the inverse of [`one_hot_planes`](Self::one_hot_planes).
    pub fn from_planes(height: usize, width: usize, num_classes: usize, planes: &[f32]) -> Result<Self> {
        let hw = height * width;
        if planes.len() != hw * num_classes {
            return Err(Error::ShapeMismatch("plane buffer has wrong length".into()));
        }
        let labels = (0..hw)
            .map(|i| {
                let mut best = 0usize;
                for c in 1..num_classes {
                    if planes[c * hw + i] > planes[best * hw + i] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect();
        Self::new(height, width, labels, num_classes)
    }
}

/// `{0, 1}` raster where 1 marks known (original) pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask(pub(crate) Grid<u8>);

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch("mask length does not match dimensions".into()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(invalid("mask values must be 0 or 1"));
        }
        Ok(Self(Grid {
            height,
            width,
            channels: 1,
            data: values,
        }))
    }

    pub fn all_known(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 1, 1))
    }

    pub fn all_unknown(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 1, 0))
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn values(&self) -> &[u8] {
        &self.0.data
    }

    #[inline]
    pub fn is_known(&self, y: usize, x: usize) -> bool {
        self.0.data[y * self.0.width + x] == 1
    }

    pub fn known_count(&self) -> usize {
        self.values().iter().filter(|&&v| v == 1).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self(self.0.flip_horizontal())
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        check_crop(self.height(), self.width(), y0, x0, height, width)?;
        Ok(Self(self.0.crop(y0, x0, height, width)))
    }

    pub fn hconcat(&self, right: &Self) -> Result<Self> {
        if self.height() != right.height() {
            return Err(Error::ShapeMismatch("heights differ".into()));
        }
        Ok(Self(self.0.hconcat(&right.0)))
    }

    /// `(1, H, W)` tensor of 0/1 values in `dtype`.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(self.values(), (1, self.height(), self.width()), device)?;
        Ok(t.to_dtype(dtype)?)
    }
}

/// One training/evaluation example: image, its layout and the outpainting mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: Pixels,
    pub layout: SemanticLayout,
    pub mask: BinaryMask,
    pub source_id: String,
}

impl ImageSample {
    pub fn new(
        pixels: Pixels,
        layout: SemanticLayout,
        mask: BinaryMask,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let sample = Self {
            pixels,
            layout,
            mask,
            source_id: source_id.into(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.pixels.height(), self.pixels.width());
        if self.layout.height() != h || self.layout.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "layout {}x{} vs pixels {h}x{w}",
                self.layout.height(),
                self.layout.width()
            )));
        }
        if self.mask.height() != h || self.mask.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs pixels {h}x{w}",
                self.mask.height(),
                self.mask.width()
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn with_mask(mut self, mask: BinaryMask) -> Result<Self> {
        self.mask = mask;
        self.validate()?;
        Ok(self)
    }
}

/// A layout whose unknown region carries no class at all.
///
/// Labels under `validity == 0` are stored as 0 but never read; the one-hot
/// encoding is the all-zero vector there.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLayout {
    pub layout: SemanticLayout,
    pub validity: BinaryMask,
}

impl MaskedLayout {
    pub fn new(layout: &SemanticLayout, validity: &BinaryMask) -> Result<Self> {
        if layout.height() != validity.height() || layout.width() != validity.width() {
            return Err(Error::ShapeMismatch("layout and mask extents differ".into()));
        }
        let labels = layout
            .labels()
            .iter()
            .zip(validity.values())
            .map(|(&l, &m)| if m == 1 { l } else { 0 })
            .collect();
        Ok(Self {
            layout: SemanticLayout::new(
                layout.height(),
                layout.width(),
                labels,
                layout.num_classes(),
            )?,
            validity: validity.clone(),
        })
    }

    pub fn one_hot_planes(&self) -> Vec<f32> {
        let mut planes = self.layout.one_hot_planes();
        let hw = self.layout.height() * self.layout.width();
        for c in 0..self.layout.num_classes() {
            for (i, &m) in self.validity.values().iter().enumerate() {
                if m == 0 {
                    planes[c * hw + i] = 0.0;
                }
            }
        }
        planes
    }

    pub fn one_hot(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let l = &self.layout;
        let t = Tensor::from_vec(
            self.one_hot_planes(),
            (l.num_classes(), l.height(), l.width()),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }
}

fn check_crop(h: usize, w: usize, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<()> {
    if y0 + ch > h || x0 + cw > w || ch == 0 || cw == 0 {
        return Err(invalid(format!(
            "crop {ch}x{cw} at ({y0},{x0}) does not fit in {h}x{w}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_labels() {
        let err = SemanticLayout::new(1, 2, vec![0, 3], 3).unwrap_err();
        assert!(matches!(err, Error::ClassOutOfRange { index: 3, .. }));
    }

    #[test]
    fn one_hot_has_one_active_channel() {
        let l = SemanticLayout::new(2, 2, vec![0, 1, 2, 1], 3).unwrap();
        let p = l.one_hot_planes();
        for i in 0..4 {
            let s: f32 = (0..3).map(|c| p[c * 4 + i]).sum();
            assert_eq!(s, 1.0);
        }
        assert_eq!(SemanticLayout::from_planes(2, 2, 3, &p).unwrap(), l);
    }

    #[test]
    fn tensor_argmax_inverts_one_hot() {
        let l = SemanticLayout::new(2, 3, vec![4, 0, 1, 2, 3, 4], 5).unwrap();
        let t = l.one_hot(&Device::Cpu, DType::F32).unwrap();
        assert_eq!(SemanticLayout::argmax(&t).unwrap(), l);
    }

    #[test]
    fn masked_layout_zeroes_unknown_region() {
        let l = SemanticLayout::new(1, 2, vec![1, 1], 2).unwrap();
        let m = BinaryMask::new(1, 2, vec![1, 0]).unwrap();
        let ml = MaskedLayout::new(&l, &m).unwrap();
        assert_eq!(ml.one_hot_planes(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn pixel_range_is_checked() {
        assert!(Pixels::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Pixels::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        assert!(Pixels::new(1, 1, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn rgb8_roundtrip_is_exact() {
        let raw: Vec<u8> = (0..=255).flat_map(|v| [v, 255 - v, v / 2]).collect();
        let img = image::RgbImage::from_raw(256, 1, raw).unwrap();
        assert_eq!(Pixels::from_rgb8(&img).to_rgb8(), img);
    }

    #[test]
    fn tensor_roundtrip() {
        let p = Pixels::new(1, 2, vec![0.1, 0.2, 0.3, -0.4, -0.5, -0.6]).unwrap();
        let t = p.to_tensor(&Device::Cpu, DType::F32).unwrap();
        assert_eq!(t.dims(), &[3, 1, 2]);
        assert_eq!(Pixels::from_tensor(&t).unwrap(), p);
    }
}
