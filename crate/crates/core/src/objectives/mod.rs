//! Loss functions for both stages.
//!
//! All losses take NCHW tensors and return scalar (rank-0) tensors so they can
//! be differentiated. Multi-scale adversarial terms are averaged over scales.

mod extractor;

pub use extractor::{FeatureExtractor, RandomConvExtractor, Vgg19Extractor};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const PERCEPTUAL_STAGES: usize = 5;

/// Trade-off weights of the stage objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ce: f64,
    pub lambda_perc: f64,
    pub lambda_l1: f64,
    /// Per-stage perceptual weights, `1 / 2^i` for `i = 1..=5`.
    pub perceptual_layers: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ce: 100.0,
            lambda_perc: 10.0,
            lambda_l1: 100.0,
            perceptual_layers: default_perceptual_weights(),
        }
    }
}

pub fn default_perceptual_weights() -> Vec<f64> {
    (1..=PERCEPTUAL_STAGES as i32).map(|i| 0.5f64.powi(i)).collect()
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_ce, self.lambda_perc, self.lambda_l1]
            .into_iter()
            .chain(self.perceptual_layers.iter().copied());
        for w in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid(format!("loss weight {w} must be finite and non-negative")));
            }
        }
        if self.perceptual_layers.len() != PERCEPTUAL_STAGES {
            return Err(invalid(format!(
                "expected {PERCEPTUAL_STAGES} perceptual layer weights, got {}",
                self.perceptual_layers.len()
            )));
        }
        Ok(())
    }
}

fn check_scales(a: &[Tensor], b: Option<&[Tensor]>) -> Result<()> {
    if a.is_empty() {
        return Err(invalid("empty logit set"));
    }
    if let Some(b) = b {
        if a.len() != b.len() {
            return Err(invalid(format!(
                "{} real scales vs {} fake scales",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

/// Discriminator hinge loss, `mean(max(0, 1 − D(real))) + mean(max(0, 1 + D(fake)))`
/// per scale, averaged over scales.
pub fn hinge_d_loss(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    check_scales(real, Some(fake))?;
    let mut total: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        let term = ((1.0 - r)?.relu()?.mean_all()? + (f + 1.0)?.relu()?.mean_all()?)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok((total.expect("non-empty") / real.len() as f64)?)
}

/// Generator hinge loss, `−mean(D(fake))`, averaged over scales.
pub fn hinge_g_loss(fake: &[Tensor]) -> Result<Tensor> {
    check_scales(fake, None)?;
    let mut total: Option<Tensor> = None;
    for f in fake {
        let term = f.mean_all()?.neg()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok((total.expect("non-empty") / fake.len() as f64)?)
}

/// Mean per-pixel cross-entropy between `(N, C, H, W)` logits and a one-hot
/// target of the same shape. With `region` (`(N, 1, H, W)` of 0/1), only pixels
/// where it is 1 are averaged.
pub fn ce_loss(logits: &Tensor, target_one_hot: &Tensor, region: Option<&Tensor>) -> Result<Tensor> {
    if logits.dims() != target_one_hot.dims() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs target {:?}",
            logits.dims(),
            target_one_hot.dims()
        )));
    }
    let log_p = candle_nn::ops::log_softmax(logits, 1)?;
    let per_pixel = (log_p * target_one_hot)?.sum_keepdim(1)?.neg()?;
    match region {
        None => Ok(per_pixel.mean_all()?),
        Some(r) => {
            let count = r.sum_all()?;
            Ok((per_pixel * r)?.sum_all()?.broadcast_div(&count.maximum(1.0)?)?)
        }
    }
}

/// Mean absolute difference.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// `Σᵢ wᵢ · L1(φᵢ(a), φᵢ(b))` over the extractor's five stages.
pub fn perceptual_loss(
    a: &Tensor,
    b: &Tensor,
    extractor: &dyn FeatureExtractor,
    layer_weights: &[f64],
) -> Result<Tensor> {
    if extractor.num_stages() != PERCEPTUAL_STAGES {
        return Err(invalid(format!(
            "perceptual loss needs {PERCEPTUAL_STAGES} feature stages, extractor has {}",
            extractor.num_stages()
        )));
    }
    if layer_weights.len() != PERCEPTUAL_STAGES {
        return Err(invalid("perceptual loss needs one weight per stage"));
    }
    let fa = extractor.features(a)?;
    let fb = extractor.features(b)?;
    let mut total: Option<Tensor> = None;
    for ((x, y), w) in fa.iter().zip(&fb).zip(layer_weights) {
        let term = (l1_loss(x, y)? * *w)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("five stages"))
}

/// `λ_ce · ce + adv`.
pub fn combine_stage1(ce: &Tensor, adv: &Tensor, w: &LossWeights) -> Result<Tensor> {
    Ok(((ce * w.lambda_ce)? + adv)?)
}

/// `λ_perc · perc + λ_L1 · l1 + adv`.
pub fn combine_stage2(perc: &Tensor, l1: &Tensor, adv: &Tensor, w: &LossWeights) -> Result<Tensor> {
    Ok((((perc * w.lambda_perc)? + (l1 * w.lambda_l1)?)? + adv)?)
}

/// Stage-one generator objective and its parts.
#[derive(Debug, Clone)]
pub struct Stage1Losses {
    pub total: Tensor,
    pub ce: Tensor,
    pub adv: Tensor,
}

pub fn stage1_total(
    s_gen_logits: &Tensor,
    s_orig_one_hot: &Tensor,
    fake_logits: &[Tensor],
    weights: &LossWeights,
    ce_region: Option<&Tensor>,
) -> Result<Stage1Losses> {
    let ce = ce_loss(s_gen_logits, s_orig_one_hot, ce_region)?;
    let adv = hinge_g_loss(fake_logits)?;
    Ok(Stage1Losses {
        total: combine_stage1(&ce, &adv, weights)?,
        ce,
        adv,
    })
}

/// Stage-two generator objective and its parts.
#[derive(Debug, Clone)]
pub struct Stage2Losses {
    pub total: Tensor,
    pub perceptual: Tensor,
    pub l1: Tensor,
    pub adv: Tensor,
}

pub fn stage2_total(
    i_gen: &Tensor,
    i_orig: &Tensor,
    fake_logits: &[Tensor],
    extractor: &dyn FeatureExtractor,
    weights: &LossWeights,
) -> Result<Stage2Losses> {
    let perceptual = perceptual_loss(i_gen, i_orig, extractor, &weights.perceptual_layers)?;
    let l1 = l1_loss(i_gen, i_orig)?;
    let adv = hinge_g_loss(fake_logits)?;
    Ok(Stage2Losses {
        total: combine_stage2(&perceptual, &l1, &adv, weights)?,
        perceptual,
        l1,
        adv,
    })
}

/// Scalar value of a rank-0 loss tensor.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
