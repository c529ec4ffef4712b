//! Generators, the multi-scale discriminator and their building blocks.

mod blocks;
pub mod checkpoint;
mod discriminator;
mod generator;
pub mod layers;
pub mod spec;

pub use blocks::{ResBlock, Spade, SpadeBlock};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use discriminator::MultiScaleDiscriminator;
pub use generator::Generator;
pub use layers::{LayerInfo, Mode, ParamStore};
pub use spec::{
    BlockKind, ConvSpec, DecoderEntry, DecoderSpec, DiscriminatorSpec, EncoderSpec, FinalActivation,
    GeneratorRole, GeneratorSpec,
};

use candle_core::{DType, Device};

use crate::error::Result;

/// Stage-one generator: masked image, masked layout and mask in, layout logits out.
pub fn build_generator_seg(num_classes: usize, width_divisor: usize, seed: u64, device: &Device) -> Result<Generator> {
    Generator::new(GeneratorSpec::layout_stage(num_classes).scaled(width_divisor), seed, device, DType::F32)
}

/// Stage-two generator with a layout-modulated decoder and tanh output.
pub fn build_generator_img(num_classes: usize, width_divisor: usize, seed: u64, device: &Device) -> Result<Generator> {
    Generator::new(GeneratorSpec::image_stage(num_classes).scaled(width_divisor), seed, device, DType::F32)
}

pub fn build_discriminator(in_channels: usize, width_divisor: usize, seed: u64, device: &Device) -> Result<MultiScaleDiscriminator> {
    MultiScaleDiscriminator::new(
        DiscriminatorSpec::standard(in_channels).scaled(width_divisor),
        seed,
        device,
        DType::F32,
    )
}
