//! Declarative layer tables for the generators and the discriminator.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub const fn new(kernel: usize, stride: usize, out_channels: usize) -> Self {
        Self {
            kernel,
            stride,
            out_channels,
        }
    }
}

const ENCODER_TABLE: [ConvSpec; 11] = [
    ConvSpec::new(7, 1, 64),
    ConvSpec::new(3, 1, 128),
    ConvSpec::new(3, 2, 128),
    ConvSpec::new(3, 1, 256),
    ConvSpec::new(3, 2, 256),
    ConvSpec::new(3, 1, 512),
    ConvSpec::new(3, 2, 512),
    ConvSpec::new(3, 1, 1024),
    ConvSpec::new(3, 2, 1024),
    ConvSpec::new(3, 1, 1024),
    ConvSpec::new(3, 2, 1024),
];

/// Block widths of the decoder; an ×2 nearest upsample follows every entry
/// except the last, and the second 1024 block has no upsample after it.
const DECODER_TABLE: [DecoderEntry; 12] = [
    DecoderEntry::Block { out_channels: 1024 },
    DecoderEntry::Upsample,
    DecoderEntry::Block { out_channels: 1024 },
    DecoderEntry::Block { out_channels: 1024 },
    DecoderEntry::Upsample,
    DecoderEntry::Block { out_channels: 512 },
    DecoderEntry::Upsample,
    DecoderEntry::Block { out_channels: 256 },
    DecoderEntry::Upsample,
    DecoderEntry::Block { out_channels: 128 },
    DecoderEntry::Upsample,
    DecoderEntry::Block { out_channels: 64 },
];

const DISCRIMINATOR_TABLE: [ConvSpec; 5] = [
    ConvSpec::new(4, 2, 64),
    ConvSpec::new(4, 2, 128),
    ConvSpec::new(4, 2, 256),
    ConvSpec::new(4, 1, 512),
    ConvSpec::new(4, 1, 1),
];

fn scale(channels: usize, divisor: usize) -> usize {
    (channels / divisor.max(1)).max(1)
}

/// Fully convolutional encoder. Every conv is followed by batch norm and a
/// leaky rectifier, with spectral norm on the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub layers: Vec<ConvSpec>,
    pub spectral_norm: bool,
    pub leaky_slope: f64,
}

impl EncoderSpec {
    pub fn standard() -> Self {
        Self {
            layers: ENCODER_TABLE.to_vec(),
            spectral_norm: true,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    pub fn scaled(mut self, divisor: usize) -> Self {
        for l in &mut self.layers {
            l.out_channels = scale(l.out_channels, divisor);
        }
        self
    }

    pub fn downsample_factor(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn latent_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderEntry {
    Block { out_channels: usize },
    Upsample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Pre-activation residual block: BN, leaky ReLU, 3×3 conv, twice.
    Residual,
    /// Residual block whose normalizations are spatially-adaptive, modulated by
    /// a condition map with `condition_channels` planes.
    Spade {
        hidden: usize,
        condition_channels: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalActivation {
    None,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub entries: Vec<DecoderEntry>,
    pub block: BlockKind,
    pub out_channels: usize,
    pub final_kernel: usize,
    pub final_activation: FinalActivation,
    pub spectral_norm: bool,
    pub leaky_slope: f64,
}

impl DecoderSpec {
    /// Residual decoder producing `out_channels` logits with no final activation.
    pub fn residual(out_channels: usize) -> Self {
        Self {
            entries: DECODER_TABLE.to_vec(),
            block: BlockKind::Residual,
            out_channels,
            final_kernel: 3,
            final_activation: FinalActivation::None,
            spectral_norm: true,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Spatially-adaptive decoder producing an RGB image through tanh.
    pub fn spade(condition_channels: usize) -> Self {
        Self {
            block: BlockKind::Spade {
                hidden: 128,
                condition_channels,
            },
            out_channels: 3,
            final_activation: FinalActivation::Tanh,
            ..Self::residual(3)
        }
    }

    pub fn scaled(mut self, divisor: usize) -> Self {
        for e in &mut self.entries {
            if let DecoderEntry::Block { out_channels } = e {
                *out_channels = scale(*out_channels, divisor);
            }
        }
        if let BlockKind::Spade { hidden, .. } = &mut self.block {
            *hidden = scale(*hidden, divisor);
        }
        self
    }

    pub fn upsample_factor(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, DecoderEntry::Upsample))
            .fold(1, |acc, _| acc * 2)
    }

    pub fn block_channels(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                DecoderEntry::Block { out_channels } => Some(*out_channels),
                DecoderEntry::Upsample => None,
            })
            .collect()
    }
}

/// Which generator family a spec describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorRole {
    /// Stage one: masked image + masked layout + mask → layout logits.
    Layout,
    /// Stage two: masked image + layout + mask → image, layout-modulated decoder.
    Image,
    /// Single-stage ablation without any layout input.
    NoSeg,
    /// Single-stage ablation with the masked layout concatenated to the input.
    SegConcat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub role: GeneratorRole,
    pub num_classes: usize,
    pub in_channels: usize,
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
}

impl GeneratorSpec {
    /// Input is `[image(3) ⧺ one-hot(C) ⧺ mask(1)]`, output is C logits.
    pub fn layout_stage(num_classes: usize) -> Self {
        Self {
            role: GeneratorRole::Layout,
            num_classes,
            in_channels: 3 + num_classes + 1,
            encoder: EncoderSpec::standard(),
            decoder: DecoderSpec::residual(num_classes),
        }
    }

    /// Input is `[image(3) ⧺ one-hot(C) ⧺ mask(1)]`; the decoder is conditioned
    /// on `[one-hot(C) ⧺ mask(1)]`.
    pub fn image_stage(num_classes: usize) -> Self {
        Self {
            role: GeneratorRole::Image,
            num_classes,
            in_channels: 3 + num_classes + 1,
            encoder: EncoderSpec::standard(),
            decoder: DecoderSpec::spade(num_classes + 1),
        }
    }

    /// `[image(3) ⧺ mask(1)]` → image.
    pub fn noseg(num_classes: usize) -> Self {
        let mut decoder = DecoderSpec::residual(3);
        decoder.final_activation = FinalActivation::Tanh;
        Self {
            role: GeneratorRole::NoSeg,
            num_classes,
            in_channels: 4,
            encoder: EncoderSpec::standard(),
            decoder,
        }
    }

    /// `[image(3) ⧺ masked one-hot(C) ⧺ mask(1)]` → image.
    pub fn segconcat(num_classes: usize) -> Self {
        Self {
            role: GeneratorRole::SegConcat,
            in_channels: 4 + num_classes,
            ..Self::noseg(num_classes)
        }
    }

    pub fn scaled(mut self, divisor: usize) -> Self {
        self.encoder = self.encoder.scaled(divisor);
        self.decoder = self.decoder.scaled(divisor);
        self
    }

    pub fn condition_channels(&self) -> Option<usize> {
        match self.decoder.block {
            BlockKind::Spade {
                condition_channels, ..
            } => Some(condition_channels),
            BlockKind::Residual => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.encoder.layers.is_empty() {
            return Err(invalid("generator needs input channels and encoder layers"));
        }
        if self.encoder.downsample_factor() != self.decoder.upsample_factor() {
            return Err(invalid(format!(
                "encoder downsamples by {} but decoder upsamples by {}",
                self.encoder.downsample_factor(),
                self.decoder.upsample_factor()
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

/// Stack of patch discriminators applied to an average-pooled image pyramid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub num_scales: usize,
    pub layers: Vec<ConvSpec>,
    pub padding: usize,
    pub leaky_slope: f64,
}

impl DiscriminatorSpec {
    pub fn standard(in_channels: usize) -> Self {
        Self {
            in_channels,
            num_scales: 2,
            layers: DISCRIMINATOR_TABLE.to_vec(),
            padding: 1,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Scales every hidden width; the single-channel logit layer is kept.
    pub fn scaled(mut self, divisor: usize) -> Self {
        let last = self.layers.len().saturating_sub(1);
        for l in &mut self.layers[..last] {
            l.out_channels = scale(l.out_channels, divisor);
        }
        self
    }

    /// Batch norm and spectral norm apply to every layer but the first and last.
    pub fn is_normalized(&self, index: usize) -> bool {
        index != 0 && index + 1 != self.layers.len()
    }

    /// Output extent of one scale for an input of extent `size`, if positive.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        self.layers.iter().try_fold(size, |s, l| {
            let padded = s + 2 * self.padding;
            (padded >= l.kernel).then(|| (padded - l.kernel) / l.stride + 1)
        })
    }

    /// Smallest square input for which every scale produces at least one logit.
    pub fn min_input_size(&self) -> usize {
        (1..=1 << 16)
            .find(|&s| {
                (0..self.num_scales).all(|k| {
                    let scaled = s >> k;
                    scaled > 0 && self.output_size(scaled).is_some_and(|o| o > 0)
                })
            })
            .unwrap_or(usize::MAX)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }
}

fn fingerprint_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("specs serialize");
    hex::encode(Sha256::digest(&json))
}
