//! Adversarial training loops for both stages and the two ablations.

mod adam;
mod batch;
mod config;
mod run;

pub use adam::Adam;
pub use batch::{Batch, TrainSet};
pub use config::{lr_at, AblationMode, PerceptualConfig, TrainConfig, TrainStage};
pub use run::{discriminator_in_channels, generator_spec, trainer_meta, StepOutcome, StepRecord, Trainer, TrainerMeta};
