//! Inference: segment the crop, extend its layout, composite, synthesize the
//! image from the extended layout, composite again.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout_data::{
    cityscapes_merge, cityscapes_split, composite_pixels, composite_tensor, known_columns, mask_with_known_columns,
    BinaryMask, DatasetProfile, ImageSample, MaskedLayout, Pixels, SegmentInput, Segmenter, SemanticLayout,
};
use crate::networks::{Checkpoint, Generator, Mode};
use crate::trainer::{generator_spec, trainer_meta, TrainStage};

/// Spatial sizes handed to the generators must be multiples of this.
pub const SIZE_MULTIPLE: usize = 32;
/// Extension fractions the networks are trained for.
pub const PROTOCOL_FRACTIONS: [f64; 2] = [0.25, 0.5];

/// Produces layout logits `(N, C, H, W)` from the masked image, masked
/// one-hot layout and mask.
pub trait LayoutGenerator: Send + Sync {
    fn num_classes(&self) -> usize;
    fn generate_layout(&self, i_masked: &Tensor, s_masked: &Tensor, mask: &Tensor) -> Result<Tensor>;
    fn fingerprint(&self) -> String;
}

/// Produces an image `(N, 3, H, W)` in `[-1, 1]` from the masked image, a
/// complete one-hot layout and the mask.
pub trait ImageGenerator: Send + Sync {
    fn generate_image(&self, i_masked: &Tensor, layout: &Tensor, mask: &Tensor) -> Result<Tensor>;
    fn fingerprint(&self) -> String;
}

/// Stage-one network in eval mode.
#[derive(Debug)]
pub struct NetworkLayoutGenerator {
    net: Generator,
    fingerprint: String,
}

impl NetworkLayoutGenerator {
    /// The fingerprint covers the architecture and the current weights.
    pub fn new(net: Generator) -> Result<Self> {
        let fingerprint = format!("{}:{}", net.fingerprint(), net.params().digest()?);
        Ok(Self { net, fingerprint })
    }

    pub fn network(&self) -> &Generator {
        &self.net
    }
}

impl LayoutGenerator for NetworkLayoutGenerator {
    fn num_classes(&self) -> usize {
        self.net.spec().num_classes
    }

    fn generate_layout(&self, i_masked: &Tensor, s_masked: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let input = Tensor::cat(&[i_masked, s_masked, mask], 1)?;
        self.net.forward(&input, None, Mode::Eval)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

/// Stage-two network in eval mode.
#[derive(Debug)]
pub struct NetworkImageGenerator {
    net: Generator,
    fingerprint: String,
}

impl NetworkImageGenerator {
    /// The fingerprint covers the architecture and the current weights.
    pub fn new(net: Generator) -> Result<Self> {
        let fingerprint = format!("{}:{}", net.fingerprint(), net.params().digest()?);
        Ok(Self { net, fingerprint })
    }

    pub fn network(&self) -> &Generator {
        &self.net
    }
}

impl ImageGenerator for NetworkImageGenerator {
    fn generate_image(&self, i_masked: &Tensor, layout: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let input = Tensor::cat(&[i_masked, layout, mask], 1)?;
        let condition = Tensor::cat(&[layout, mask], 1)?;
        self.net.forward(&input, Some(&condition), Mode::Eval)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

/// Predicts one class everywhere.
#[derive(Debug, Clone)]
pub struct ConstantLayoutStub {
    pub num_classes: usize,
    pub class: usize,
}

impl LayoutGenerator for ConstantLayoutStub {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn generate_layout(&self, i_masked: &Tensor, _: &Tensor, _: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = i_masked.dims4()?;
        let mut planes = vec![0f32; self.num_classes * h * w];
        planes[self.class * h * w..(self.class + 1) * h * w].fill(10.0);
        let one = Tensor::from_vec(planes, (1, self.num_classes, h, w), i_masked.device())?;
        Ok(one.repeat((n, 1, 1, 1))?)
    }

    fn fingerprint(&self) -> String {
        format!("constant-layout-{}-{}", self.num_classes, self.class)
    }
}

/// Returns the masked image unchanged.
#[derive(Debug, Clone, Default)]
pub struct PassThroughImageStub;

impl ImageGenerator for PassThroughImageStub {
    fn generate_image(&self, i_masked: &Tensor, _: &Tensor, _: &Tensor) -> Result<Tensor> {
        Ok(i_masked.clone())
    }

    fn fingerprint(&self) -> String {
        "pass-through-image".into()
    }
}

/// Everything inference needs, shared read-only between requests.
#[derive(Clone)]
pub struct Models {
    pub profile: DatasetProfile,
    pub layout: Arc<dyn LayoutGenerator>,
    pub image: Arc<dyn ImageGenerator>,
    pub segmenter: Arc<dyn Segmenter>,
    pub device: Device,
}

impl std::fmt::Debug for Models {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Models")
            .field("profile", &self.profile.name)
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

impl Models {
    pub fn new(
        profile: DatasetProfile,
        layout: Arc<dyn LayoutGenerator>,
        image: Arc<dyn ImageGenerator>,
        segmenter: Arc<dyn Segmenter>,
    ) -> Result<Self> {
        for (what, c) in [("layout generator", layout.num_classes()), ("segmenter", segmenter.num_classes())] {
            if c != profile.num_classes {
                return Err(Error::CheckpointMismatch {
                    expected: format!("{} classes ({})", profile.num_classes, profile.name),
                    found: format!("{what} with {c} classes"),
                });
            }
        }
        Ok(Self {
            profile,
            layout,
            image,
            segmenter,
            device: Device::Cpu,
        })
    }

    /// Builds both generators from trainer checkpoints, checking that the
    /// stages and spec fingerprints agree with `profile`.
    pub fn from_checkpoints(
        profile: DatasetProfile,
        stage1: &Path,
        stage2: &Path,
        segmenter: Arc<dyn Segmenter>,
        device: &Device,
    ) -> Result<Self> {
        let load = |path: &Path, stage: TrainStage| -> Result<Generator> {
            let ck = Checkpoint::load(path, device)?;
            let meta = trainer_meta(&ck)?;
            if meta.stage != stage {
                return Err(Error::CheckpointMismatch {
                    expected: format!("{stage:?} checkpoint"),
                    found: format!("{:?} checkpoint at {}", meta.stage, path.display()),
                });
            }
            let spec = generator_spec(stage, profile.num_classes, profile.width_divisor);
            let g = Generator::new(spec, 0, device, DType::F32)?;
            ck.restore_generator("g", &g)?;
            Ok(g)
        };
        let layout = load(stage1, TrainStage::Layout)?;
        let image = load(stage2, TrainStage::Image)?;
        let mut m = Self::new(
            profile,
            Arc::new(NetworkLayoutGenerator::new(layout)?),
            Arc::new(NetworkImageGenerator::new(image)?),
            segmenter,
        )?;
        m.device = device.clone();
        Ok(m)
    }

    /// Identifies the generator pair; sessions created under one pair are
    /// not valid under another.
    pub fn fingerprint(&self) -> String {
        format!("{}+{}", self.layout.fingerprint(), self.image.fingerprint())
    }
}

/// A crop to extend to the right.
#[derive(Debug, Clone)]
pub struct OutpaintRequest {
    pub source_id: String,
    pub cropped: Pixels,
    /// Fraction of the final canvas width that is generated.
    pub fraction: f64,
    /// Layout of the crop, used instead of running the segmenter.
    pub layout: Option<SemanticLayout>,
}

impl OutpaintRequest {
    pub fn new(source_id: impl Into<String>, cropped: Pixels, fraction: f64) -> Self {
        Self {
            source_id: source_id.into(),
            cropped,
            fraction,
            layout: None,
        }
    }

    /// True for fractions other than the trained 0.25 / 0.5.
    pub fn out_of_distribution(&self) -> bool {
        !PROTOCOL_FRACTIONS.iter().any(|f| (f - self.fraction).abs() < 1e-9)
    }

    /// `(height, width)` of the outpainted canvas: the crop width divided by
    /// the known share, rounded up to a multiple of 32.
    pub fn canvas(&self) -> Result<(usize, usize)> {
        let (h, wk) = (self.cropped.height(), self.cropped.width());
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(invalid(format!("fraction {} outside (0, 1)", self.fraction)));
        }
        if h == 0 || wk == 0 || h % SIZE_MULTIPLE != 0 {
            return Err(invalid(format!(
                "crop height {h} must be a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        let w = ((wk as f64) / (1.0 - self.fraction)).round() as usize;
        let w = w.max(wk + 1).div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE;
        Ok((h, w))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub segment_ms: f64,
    pub layout_ms: f64,
    pub image_ms: f64,
}

#[derive(Debug, Clone)]
pub struct OutpaintResult {
    pub image: Pixels,
    /// Extended layout.
    pub layout: SemanticLayout,
    pub masked_layout: MaskedLayout,
    pub mask: BinaryMask,
    pub out_of_distribution: bool,
    pub timing: Timing,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct Canvas {
    mask: BinaryMask,
    i_masked: Pixels,
}

fn canvas(request: &OutpaintRequest) -> Result<Canvas> {
    let (h, w) = request.canvas()?;
    let wk = request.cropped.width();
    let mask = mask_with_known_columns(h, w, wk);
    let i_masked = request.cropped.hconcat(&Pixels::zeros(h, w - wk))?;
    Ok(Canvas { mask, i_masked })
}

fn to_batch(t: Tensor) -> Result<Tensor> {
    Ok(t.unsqueeze(0)?)
}

fn synthesize(models: &Models, c: &Canvas, layout: &SemanticLayout, timing: &mut Timing) -> Result<Pixels> {
    let start = Instant::now();
    let dev = &models.device;
    let i_masked = to_batch(c.i_masked.to_tensor(dev, DType::F32)?)?;
    let mask = to_batch(c.mask.to_tensor(dev, DType::F32)?)?;
    let s = to_batch(layout.one_hot(dev, DType::F32)?)?;
    let generated = models.image.generate_image(&i_masked, &s, &mask)?;
    let (n, ch, h, w) = generated.dims4()?;
    if (n, ch, h, w) != (1, 3, c.mask.height(), c.mask.width()) {
        return Err(Error::ShapeMismatch(format!(
            "image generator returned {:?}",
            generated.dims()
        )));
    }
    let generated = Pixels::from_tensor(&generated.squeeze(0)?)?;
    let out = composite_pixels(&generated, &c.i_masked, &c.mask)?;
    timing.image_ms = ms(start);
    Ok(out)
}

fn check_layout(layout: &SemanticLayout, h: usize, w: usize, num_classes: usize) -> Result<()> {
    if layout.height() != h || layout.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "layout is {}x{}, expected {h}x{w}",
            layout.height(),
            layout.width()
        )));
    }
    if layout.num_classes() != num_classes {
        return Err(Error::ShapeMismatch(format!(
            "layout has {} classes, expected {num_classes}",
            layout.num_classes()
        )));
    }
    Ok(())
}

/// Runs both stages on one crop.
pub fn outpaint(request: &OutpaintRequest, models: &Models) -> Result<OutpaintResult> {
    let c = canvas(request)?;
    let (h, w) = (c.mask.height(), c.mask.width());
    let num_classes = models.profile.num_classes;
    let mut timing = Timing::default();

    let start = Instant::now();
    let cropped_layout = match &request.layout {
        Some(l) => l.clone(),
        None => models.segmenter.predict(&SegmentInput {
            source_id: &request.source_id,
            pixels: &request.cropped,
        })?,
    };
    check_layout(&cropped_layout, h, request.cropped.width(), num_classes)?;
    let padded = cropped_layout.hconcat(&SemanticLayout::filled(h, w - request.cropped.width(), 0, num_classes)?)?;
    let masked_layout = MaskedLayout::new(&padded, &c.mask)?;
    timing.segment_ms = ms(start);

    let start = Instant::now();
    let dev = &models.device;
    let i_masked = to_batch(c.i_masked.to_tensor(dev, DType::F32)?)?;
    let mask = to_batch(c.mask.to_tensor(dev, DType::F32)?)?;
    let s_masked = to_batch(masked_layout.one_hot(dev, DType::F32)?)?;
    let logits = models.layout.generate_layout(&i_masked, &s_masked, &mask)?;
    if logits.dims() != s_masked.dims() {
        return Err(Error::ShapeMismatch(format!(
            "layout generator returned {:?}, expected {:?}",
            logits.dims(),
            s_masked.dims()
        )));
    }
    let probs = candle_nn::ops::softmax(&logits, 1)?;
    let s_out = composite_tensor(&probs, &s_masked, &mask)?;
    let layout = SemanticLayout::argmax(&s_out.squeeze(0)?)?;
    timing.layout_ms = ms(start);

    let image = synthesize(models, &c, &layout, &mut timing)?;
    Ok(OutpaintResult {
        image,
        layout,
        masked_layout,
        mask: c.mask,
        out_of_distribution: request.out_of_distribution(),
        timing,
    })
}

/// Stage two only, conditioned on a user-supplied full layout.
pub fn regenerate_with_layout(
    request: &OutpaintRequest,
    edited_layout: &SemanticLayout,
    models: &Models,
) -> Result<OutpaintResult> {
    let c = canvas(request)?;
    let (h, w) = (c.mask.height(), c.mask.width());
    check_layout(edited_layout, h, w, models.profile.num_classes)?;
    let mut timing = Timing::default();
    let image = synthesize(models, &c, edited_layout, &mut timing)?;
    Ok(OutpaintResult {
        image,
        layout: edited_layout.clone(),
        masked_layout: MaskedLayout::new(edited_layout, &c.mask)?,
        mask: c.mask,
        out_of_distribution: request.out_of_distribution(),
        timing,
    })
}

/// Splits a 1:2 image into two squares, extends each half outward from the
/// centre line and joins the results back into a 1:2 image.
pub fn outpaint_cityscapes(full: &Pixels, source_id: &str, fraction: f64, models: &Models) -> Result<OutpaintResult> {
    let (h, w) = (full.height(), full.width());
    let num_classes = models.profile.num_classes;
    let placeholder = ImageSample::new(
        full.clone(),
        SemanticLayout::filled(h, w, 0, num_classes)?,
        BinaryMask::all_known(h, w),
        source_id,
    )?;
    let (left, right) = cityscapes_split(&placeholder)?;
    let wk = known_columns(h, fraction);
    let mut halves = Vec::with_capacity(2);
    let mut timing = Timing::default();
    let mut ood = false;
    for half in [&left, &right] {
        let request = OutpaintRequest::new(half.source_id.clone(), half.pixels.crop(0, 0, h, wk)?, fraction);
        if request.canvas()? != (h, h) {
            return Err(invalid(format!(
                "a {h}x{h} half cannot be rebuilt from {wk} known columns at fraction {fraction}"
            )));
        }
        let r = outpaint(&request, models)?;
        timing.segment_ms += r.timing.segment_ms;
        timing.layout_ms += r.timing.layout_ms;
        timing.image_ms += r.timing.image_ms;
        ood |= r.out_of_distribution;
        halves.push((
            ImageSample::new(r.image, r.layout, r.mask, half.source_id.clone())?,
            r.masked_layout,
        ));
    }
    let merged = cityscapes_merge(&halves[0].0, &halves[1].0)?;
    let masked = cityscapes_merge(
        &ImageSample::new(
            halves[0].0.pixels.clone(),
            halves[0].1.layout.clone(),
            halves[0].0.mask.clone(),
            halves[0].0.source_id.clone(),
        )?,
        &ImageSample::new(
            halves[1].0.pixels.clone(),
            halves[1].1.layout.clone(),
            halves[1].0.mask.clone(),
            halves[1].0.source_id.clone(),
        )?,
    )?;
    Ok(OutpaintResult {
        image: merged.pixels,
        layout: merged.layout,
        masked_layout: MaskedLayout::new(&masked.layout, &merged.mask)?,
        mask: merged.mask,
        out_of_distribution: ood,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout_data::ConstantSegmenter;

    fn stub_models(classes: usize) -> Models {
        let profile = DatasetProfile {
            num_classes: classes,
            ..DatasetProfile::desk()
        };
        Models::new(
            profile,
            Arc::new(ConstantLayoutStub {
                num_classes: classes,
                class: 2,
            }),
            Arc::new(PassThroughImageStub),
            Arc::new(ConstantSegmenter {
                class: 1,
                num_classes: classes,
            }),
        )
        .unwrap()
    }

    fn crop(h: usize, w: usize) -> Pixels {
        let data = (0..h * w * 3).map(|i| ((i % 17) as f32 / 8.0) - 1.0).collect();
        Pixels::new(h, w, data).unwrap()
    }

    #[test]
    fn canvas_sizes() {
        assert_eq!(OutpaintRequest::new("a", crop(64, 48), 0.25).canvas().unwrap(), (64, 64));
        assert_eq!(OutpaintRequest::new("a", crop(64, 32), 0.5).canvas().unwrap(), (64, 64));
        assert_eq!(OutpaintRequest::new("a", crop(64, 40), 0.3).canvas().unwrap(), (64, 64));
        assert!(OutpaintRequest::new("a", crop(60, 40), 0.25).canvas().is_err());
        assert!(OutpaintRequest::new("a", crop(64, 40), 0.3).out_of_distribution());
        assert!(!OutpaintRequest::new("a", crop(64, 48), 0.25).out_of_distribution());
    }

    #[test]
    fn stubs_extend_layout_and_keep_pixels() {
        let m = stub_models(4);
        let req = OutpaintRequest::new("a", crop(64, 48), 0.25);
        let r = outpaint(&req, &m).unwrap();
        assert_eq!((r.image.height(), r.image.width()), (64, 64));
        for y in 0..64 {
            for x in 0..64 {
                if x < 48 {
                    assert_eq!(r.image.pixel(y, x), req.cropped.pixel(y, x));
                    assert_eq!(r.layout.label(y, x), 1);
                } else {
                    assert_eq!(r.image.pixel(y, x), [0.0; 3]);
                    assert_eq!(r.layout.label(y, x), 2);
                }
            }
        }
    }

    #[test]
    fn precomputed_layout_is_checked() {
        let m = stub_models(4);
        let mut req = OutpaintRequest::new("a", crop(64, 48), 0.25);
        req.layout = Some(SemanticLayout::filled(64, 40, 0, 4).unwrap());
        assert!(matches!(outpaint(&req, &m), Err(Error::ShapeMismatch(_))));
        req.layout = Some(SemanticLayout::filled(64, 48, 3, 4).unwrap());
        assert_eq!(outpaint(&req, &m).unwrap().layout.label(0, 0), 3);
    }

    #[test]
    fn regenerate_validates_layout() {
        let m = stub_models(4);
        let req = OutpaintRequest::new("a", crop(64, 48), 0.25);
        assert!(regenerate_with_layout(&req, &SemanticLayout::filled(64, 64, 0, 5).unwrap(), &m).is_err());
        assert!(regenerate_with_layout(&req, &SemanticLayout::filled(32, 64, 0, 4).unwrap(), &m).is_err());
        let r = regenerate_with_layout(&req, &SemanticLayout::filled(64, 64, 3, 4).unwrap(), &m).unwrap();
        assert_eq!(r.layout.label(5, 60), 3);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let r = Models::new(
            DatasetProfile::desk(),
            Arc::new(ConstantLayoutStub { num_classes: 3, class: 0 }),
            Arc::new(PassThroughImageStub),
            Arc::new(ConstantSegmenter { class: 0, num_classes: 8 }),
        );
        assert!(matches!(r, Err(Error::CheckpointMismatch { .. })));
    }

    #[test]
    fn cityscapes_keeps_centre() {
        let m = stub_models(4);
        let full = crop(64, 128);
        let r = outpaint_cityscapes(&full, "street", 0.25, &m).unwrap();
        assert_eq!((r.image.height(), r.image.width()), (64, 128));
        for y in 0..64 {
            for x in 16..112 {
                assert_eq!(r.image.pixel(y, x), full.pixel(y, x), "({y}, {x})");
            }
            assert_eq!(r.image.pixel(y, 0), [0.0; 3]);
            assert_eq!(r.image.pixel(y, 127), [0.0; 3]);
        }
    }
}
