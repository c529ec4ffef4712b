use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::objectives::LossWeights;

/// Which network family a run trains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// The two-stage model: layout outpainting, then layout-guided synthesis.
    #[default]
    Full,
    /// Single image generator fed only the masked image and mask.
    Noseg,
    /// Single image generator fed the masked image, masked layout and mask.
    Segconcat,
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "noseg" => Ok(Self::Noseg),
            "segconcat" => Ok(Self::Segconcat),
            other => Err(invalid(format!("unknown ablation mode '{other}'"))),
        }
    }
}

/// Concrete network pair being optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    Layout,
    Image,
    Noseg,
    Segconcat,
}

impl TrainStage {
    /// `stage` is 1 or 2; ablations are single-stage and accept either.
    pub fn resolve(stage: u8, mode: AblationMode) -> Result<Self> {
        match (mode, stage) {
            (_, s) if s != 1 && s != 2 => Err(invalid(format!("stage must be 1 or 2, got {s}"))),
            (AblationMode::Full, 1) => Ok(Self::Layout),
            (AblationMode::Full, _) => Ok(Self::Image),
            (AblationMode::Noseg, _) => Ok(Self::Noseg),
            (AblationMode::Segconcat, _) => Ok(Self::Segconcat),
        }
    }

    /// Whether the generator produces an image (and is trained with the
    /// reconstruction objective) rather than layout logits.
    pub fn produces_image(self) -> bool {
        self != Self::Layout
    }
}

/// Source of the perceptual-loss features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerceptualConfig {
    /// Fixed-seed random conv features; no download needed.
    Random { seed: u64 },
    /// VGG-19 weights in safetensors with torchvision names.
    Vgg19 { path: PathBuf },
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self::Random { seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub decay_start_epoch: u32,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    pub mask_fraction: f64,
    pub ablation_mode: AblationMode,
    pub seed: u64,
    pub batch_size: usize,
    /// Discriminator updates before each generator update.
    pub d_steps: u32,
    /// Restrict the cross-entropy term to the unknown region.
    pub ce_masked_region_only: bool,
    /// Random resize-crop and horizontal flip.
    pub augment: bool,
    pub perceptual: PerceptualConfig,
    /// Checkpoint every this many steps (0 disables periodic checkpoints).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            decay_start_epoch: 200,
            lr_g: 1e-4,
            lr_d: 4e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
            mask_fraction: 0.25,
            ablation_mode: AblationMode::Full,
            seed: 0,
            batch_size: 32,
            d_steps: 1,
            ce_masked_region_only: false,
            augment: true,
            perceptual: PerceptualConfig::default(),
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Small-batch, no-augmentation settings for the synthetic desk set.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            augment: false,
            checkpoint_every: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.decay_start_epoch == 0 || self.decay_start_epoch > self.epochs {
            return fail(format!(
                "need 0 < decay_start_epoch ({}) <= epochs ({})",
                self.decay_start_epoch, self.epochs
            ));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite()) {
            return fail("learning rates must be positive".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return fail(format!("mask_fraction {} outside (0, 1)", self.mask_fraction));
        }
        if self.batch_size == 0 || self.d_steps == 0 {
            return fail("batch_size and d_steps must be positive".into());
        }
        self.loss_weights.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// `(lr_g, lr_d)` for a zero-based epoch: constant up to `decay_start_epoch`,
/// then a straight line reaching zero at `epochs`.
pub fn lr_at(epoch: u32, config: &TrainConfig) -> (f64, f64) {
    let factor = if epoch >= config.epochs {
        0.0
    } else if epoch <= config.decay_start_epoch {
        1.0
    } else {
        f64::from(config.epochs - epoch) / f64::from(config.epochs - config.decay_start_epoch)
    };
    (config.lr_g * factor, config.lr_d * factor)
}
