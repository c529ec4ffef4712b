use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::layout_data::{apply_mask, augment, make_right_mask, AugmentConfig, ImageSample};

/// Stacked tensors of one minibatch. Masks are 1 on known pixels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub source_ids: Vec<String>,
    pub i_orig: Tensor,
    pub i_masked: Tensor,
    pub mask: Tensor,
    pub s_orig: Tensor,
    pub s_masked: Tensor,
}

impl Batch {
    /// Uses each sample's own mask.
    pub fn from_samples(samples: &[ImageSample], device: &Device, dtype: DType) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("empty batch"));
        }
        let mut i_orig = Vec::with_capacity(samples.len());
        let mut i_masked = Vec::with_capacity(samples.len());
        let mut mask = Vec::with_capacity(samples.len());
        let mut s_orig = Vec::with_capacity(samples.len());
        let mut s_masked = Vec::with_capacity(samples.len());
        for s in samples {
            let (pm, lm) = apply_mask(s)?;
            i_orig.push(s.pixels.to_tensor(device, dtype)?);
            i_masked.push(pm.to_tensor(device, dtype)?);
            mask.push(s.mask.to_tensor(device, dtype)?);
            s_orig.push(s.layout.one_hot(device, dtype)?);
            s_masked.push(lm.one_hot(device, dtype)?);
        }
        let stack = |v: Vec<Tensor>| -> Result<Tensor> {
            Tensor::stack(&v, 0).map_err(|e| Error::ShapeMismatch(format!("samples differ in shape: {e}")))
        };
        Ok(Self {
            source_ids: samples.iter().map(|s| s.source_id.clone()).collect(),
            i_orig: stack(i_orig)?,
            i_masked: stack(i_masked)?,
            mask: stack(mask)?,
            s_orig: stack(s_orig)?,
            s_masked: stack(s_masked)?,
        })
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }
}

/// Training examples plus the deterministic order/augmentation schedule.
#[derive(Debug, Clone)]
pub struct TrainSet {
    samples: Vec<ImageSample>,
    num_classes: usize,
    size: (usize, usize),
}

impl TrainSet {
    pub fn new(samples: Vec<ImageSample>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| invalid("training set is empty"))?;
        let size = (first.height(), first.width());
        let num_classes = first.layout.num_classes();
        for s in &samples {
            s.validate()?;
            if (s.height(), s.width()) != size || s.layout.num_classes() != num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "sample '{}' is {}x{} with {} classes, expected {}x{} with {num_classes}",
                    s.source_id,
                    s.height(),
                    s.width(),
                    s.layout.num_classes(),
                    size.0,
                    size.1
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            size,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `(height, width)` shared by every sample.
    pub fn size(&self) -> (usize, usize) {
        self.size
    }

    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        self.samples.len().div_ceil(batch_size)
    }

    /// Sample permutation of `epoch`, a pure function of `(seed, epoch)`.
    pub fn order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut rng);
        idx
    }

    /// The `index`-th batch of `epoch` with masks of `mask_fraction` applied.
    #[allow(clippy::too_many_arguments)]
    pub fn batch(
        &self,
        seed: u64,
        epoch: u64,
        index: usize,
        batch_size: usize,
        mask_fraction: f64,
        augmentation: bool,
        device: &Device,
    ) -> Result<Batch> {
        let order = self.order(seed, epoch);
        let start = index * batch_size;
        if start >= order.len() {
            return Err(invalid(format!("batch {index} is past the end of the epoch")));
        }
        let end = (start + batch_size).min(order.len());
        let (h, w) = self.size;
        let mask = make_right_mask(h, w, mask_fraction)?;
        let aug = AugmentConfig::for_crop(h);
        let picked = order[start..end]
            .iter()
            .map(|&i| {
                let s = &self.samples[i];
                let s = if augmentation && h == w {
                    let key = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
                    augment(s, &aug, key)?
                } else {
                    s.clone()
                };
                s.with_mask(mask.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&picked, device, DType::F32)
    }
}
