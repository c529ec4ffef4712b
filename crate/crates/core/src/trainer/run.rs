use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::batch::{Batch, TrainSet};
use super::config::{lr_at, PerceptualConfig, TrainConfig, TrainStage};
use crate::error::{invalid, Error, Result};
use crate::layout_data::composite_tensor;
use crate::networks::{Checkpoint, DiscriminatorSpec, Generator, GeneratorSpec, Mode, MultiScaleDiscriminator, ParamStore};
use crate::objectives::{
    hinge_d_loss, scalar, stage1_total, stage2_total, FeatureExtractor, RandomConvExtractor, Vgg19Extractor,
};

pub fn generator_spec(stage: TrainStage, num_classes: usize, width_divisor: usize) -> GeneratorSpec {
    let spec = match stage {
        TrainStage::Layout => GeneratorSpec::layout_stage(num_classes),
        TrainStage::Image => GeneratorSpec::image_stage(num_classes),
        TrainStage::Noseg => GeneratorSpec::noseg(num_classes),
        TrainStage::Segconcat => GeneratorSpec::segconcat(num_classes),
    };
    spec.scaled(width_divisor)
}

/// Discriminator input is `[content ⧺ condition ⧺ mask]`.
pub fn discriminator_in_channels(stage: TrainStage, num_classes: usize) -> usize {
    match stage {
        TrainStage::Layout => num_classes + 3 + 1,
        TrainStage::Image => 3 + num_classes + 1,
        TrainStage::Noseg => 3 + 3 + 1,
        TrainStage::Segconcat => 3 + 3 + num_classes + 1,
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u32,
    pub lr_g: f64,
    pub lr_d: f64,
    pub losses: BTreeMap<String, f64>,
}

/// A finished step with the composited generator output of its batch.
#[derive(Debug)]
pub struct StepOutcome {
    pub record: StepRecord,
    /// Generated content with the known region pasted back.
    pub composite: Tensor,
    /// Ground-truth content of the known region.
    pub known: Tensor,
    /// `(N, 1, H, W)`, 1 on known pixels.
    pub mask: Tensor,
}

/// Trainer state stored in checkpoint metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerMeta {
    pub stage: TrainStage,
    pub config: TrainConfig,
    pub config_fingerprint: String,
    pub num_classes: usize,
    pub width_divisor: usize,
    /// Completed steps; with the seed this fixes the data order and
    /// augmentation draws of every later step.
    pub step: u64,
    pub opt_g_steps: u64,
    pub opt_d_steps: u64,
}

struct StageTensors {
    g_input: Tensor,
    condition: Option<Tensor>,
    d_condition: Tensor,
    real: Tensor,
    known: Tensor,
}

pub struct Trainer {
    stage: TrainStage,
    config: TrainConfig,
    num_classes: usize,
    width_divisor: usize,
    generator: Generator,
    discriminator: MultiScaleDiscriminator,
    opt_g: Adam,
    opt_d: Adam,
    extractor: Option<Box<dyn FeatureExtractor>>,
    device: Device,
    step: u64,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("stage", &self.stage)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

fn snapshot_buffers(store: &ParamStore) -> Vec<Tensor> {
    store.buffers().iter().map(|(_, b)| b.get()).collect()
}

fn restore_buffers(store: &ParamStore, saved: Vec<Tensor>) {
    for ((_, b), t) in store.buffers().iter().zip(saved) {
        b.set(t);
    }
}

impl Trainer {
    pub fn new(
        stage: TrainStage,
        config: TrainConfig,
        num_classes: usize,
        width_divisor: usize,
        device: &Device,
    ) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 {
            return Err(invalid("num_classes must be positive"));
        }
        let generator = Generator::new(
            generator_spec(stage, num_classes, width_divisor),
            config.seed,
            device,
            DType::F32,
        )?;
        let discriminator = MultiScaleDiscriminator::new(
            DiscriminatorSpec::standard(discriminator_in_channels(stage, num_classes)).scaled(width_divisor),
            config.seed.wrapping_add(1),
            device,
            DType::F32,
        )?;
        let opt_g = Adam::new(generator.params().params(), config.adam_beta1, config.adam_beta2, config.adam_eps)?;
        let opt_d = Adam::new(
            discriminator.params().params(),
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )?;
        let extractor: Option<Box<dyn FeatureExtractor>> = if stage.produces_image() {
            Some(match &config.perceptual {
                PerceptualConfig::Random { seed } => Box::new(RandomConvExtractor::standard(*seed, DType::F32)),
                PerceptualConfig::Vgg19 { path } => Box::new(Vgg19Extractor::load(path, device, DType::F32)?),
            })
        } else {
            None
        };
        Ok(Self {
            stage,
            config,
            num_classes,
            width_divisor,
            generator,
            discriminator,
            opt_g,
            opt_d,
            extractor,
            device: device.clone(),
            step: 0,
        })
    }

    pub fn stage(&self) -> TrainStage {
        self.stage
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &MultiScaleDiscriminator {
        &self.discriminator
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn stage_tensors(&self, b: &Batch) -> Result<StageTensors> {
        let cat = |v: &[&Tensor]| Tensor::cat(v, 1);
        Ok(match self.stage {
            TrainStage::Layout => StageTensors {
                g_input: cat(&[&b.i_masked, &b.s_masked, &b.mask])?,
                condition: None,
                d_condition: cat(&[&b.i_masked, &b.mask])?,
                real: b.s_orig.clone(),
                known: b.s_masked.clone(),
            },
            TrainStage::Image => {
                let cond = cat(&[&b.s_orig, &b.mask])?;
                StageTensors {
                    g_input: cat(&[&b.i_masked, &b.s_orig, &b.mask])?,
                    condition: Some(cond.clone()),
                    d_condition: cond,
                    real: b.i_orig.clone(),
                    known: b.i_masked.clone(),
                }
            }
            TrainStage::Noseg => {
                let input = cat(&[&b.i_masked, &b.mask])?;
                StageTensors {
                    g_input: input.clone(),
                    condition: None,
                    d_condition: input,
                    real: b.i_orig.clone(),
                    known: b.i_masked.clone(),
                }
            }
            TrainStage::Segconcat => {
                let input = cat(&[&b.i_masked, &b.s_masked, &b.mask])?;
                StageTensors {
                    g_input: input.clone(),
                    condition: None,
                    d_condition: input,
                    real: b.i_orig.clone(),
                    known: b.i_masked.clone(),
                }
            }
        })
    }

    /// Discriminator logits for the generator loss. Every discriminator
    /// tensor, running statistics included, is left as it was.
    fn generator_side_logits(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let saved = snapshot_buffers(self.discriminator.params());
        let out = self.discriminator.forward(input, Mode::Train);
        restore_buffers(self.discriminator.params(), saved);
        out
    }

    fn check_data(&self, data: &TrainSet) -> Result<()> {
        if data.num_classes() != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "training set has {} classes, networks were built for {}",
                data.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }

    /// One batch: `d_steps` discriminator updates, then one generator update.
    pub fn step(&mut self, data: &TrainSet) -> Result<StepOutcome> {
        self.check_data(data)?;
        let cfg = &self.config;
        let spe = data.steps_per_epoch(cfg.batch_size) as u64;
        let epoch = self.step / spe;
        let index = (self.step % spe) as usize;
        let epoch32 = u32::try_from(epoch).unwrap_or(u32::MAX);
        let (lr_g, lr_d) = lr_at(epoch32, cfg);
        let batch = data.batch(
            cfg.seed,
            epoch,
            index,
            cfg.batch_size,
            cfg.mask_fraction,
            cfg.augment,
            &self.device,
        )?;
        let t = self.stage_tensors(&batch)?;
        let n = batch.len();
        let step = self.step;
        let non_finite = |components: &BTreeMap<String, f64>| Error::NonFiniteLoss {
            step,
            components: format!("{components:?} batch={:?}", batch.source_ids),
        };

        let generated = self.generator.forward(&t.g_input, t.condition.as_ref(), Mode::Train)?;
        let content = match self.stage {
            TrainStage::Layout => candle_nn::ops::softmax(&generated, 1)?,
            _ => generated.clone(),
        };
        let composite = composite_tensor(&content, &t.known, &batch.mask)?;

        let mut losses = BTreeMap::new();
        let fake_d = Tensor::cat(&[&composite.detach(), &t.d_condition], 1)?;
        let real_d = Tensor::cat(&[&t.real, &t.d_condition], 1)?;
        let d_input = Tensor::cat(&[&fake_d, &real_d], 0)?;
        for _ in 0..cfg.d_steps {
            let outs = self.discriminator.forward(&d_input, Mode::Train)?;
            let fake: Vec<Tensor> = outs.iter().map(|o| o.narrow(0, 0, n)).collect::<candle_core::Result<_>>()?;
            let real: Vec<Tensor> = outs.iter().map(|o| o.narrow(0, n, n)).collect::<candle_core::Result<_>>()?;
            let d_loss = hinge_d_loss(&real, &fake)?;
            let d_value = scalar(&d_loss)?;
            losses.insert("d".to_string(), d_value);
            if !d_value.is_finite() {
                return Err(non_finite(&losses));
            }
            self.opt_d.step(&d_loss.backward()?, lr_d)?;
        }

        let fake_logits = self.generator_side_logits(&Tensor::cat(&[&composite, &t.d_condition], 1)?)?;

        let total = match self.stage {
            TrainStage::Layout => {
                let region = if cfg.ce_masked_region_only {
                    Some((1.0 - &batch.mask)?)
                } else {
                    None
                };
                let l = stage1_total(&generated, &batch.s_orig, &fake_logits, &cfg.loss_weights, region.as_ref())?;
                losses.insert("ce".into(), scalar(&l.ce)?);
                losses.insert("g_adv".into(), scalar(&l.adv)?);
                l.total
            }
            _ => {
                let extractor = self.extractor.as_deref().expect("image stages have an extractor");
                let l = stage2_total(&generated, &batch.i_orig, &fake_logits, extractor, &cfg.loss_weights)?;
                losses.insert("perceptual".into(), scalar(&l.perceptual)?);
                losses.insert("l1".into(), scalar(&l.l1)?);
                losses.insert("g_adv".into(), scalar(&l.adv)?);
                l.total
            }
        };
        losses.insert("g_total".into(), scalar(&total)?);
        if losses.values().any(|v| !v.is_finite()) {
            return Err(non_finite(&losses));
        }
        self.opt_g.step(&total.backward()?, lr_g)?;
        self.step += 1;

        Ok(StepOutcome {
            record: StepRecord {
                step,
                epoch: epoch32,
                lr_g,
                lr_d,
                losses,
            },
            composite: composite.detach(),
            known: t.known,
            mask: batch.mask,
        })
    }

    pub fn meta(&self) -> TrainerMeta {
        TrainerMeta {
            stage: self.stage,
            config: self.config.clone(),
            config_fingerprint: self.config.fingerprint(),
            num_classes: self.num_classes,
            width_divisor: self.width_divisor,
            step: self.step,
            opt_g_steps: self.opt_g.steps(),
            opt_d_steps: self.opt_d.steps(),
        }
    }

    /// Weights, buffers, optimizer moments and trainer metadata.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.add_generator("g", &self.generator);
        ck.add_discriminator("d", &self.discriminator);
        for (k, v) in self.opt_g.state("opt_g.").into_iter().chain(self.opt_d.state("opt_d.")) {
            ck.insert(k, v);
        }
        ck.meta.trainer = Some(serde_json::to_value(self.meta())?);
        Ok(ck)
    }

    pub fn resume(ck: &Checkpoint, device: &Device) -> Result<Self> {
        let meta = trainer_meta(ck)?;
        if meta.config.fingerprint() != meta.config_fingerprint {
            return Err(Error::MalformedCheckpoint("trainer config does not match its fingerprint".into()));
        }
        let mut t = Self::new(meta.stage, meta.config, meta.num_classes, meta.width_divisor, device)?;
        ck.restore_generator("g", &t.generator)?;
        ck.restore_discriminator("d", &t.discriminator)?;
        let lookup = |k: &str| ck.tensors.get(k).cloned();
        t.opt_g.load_state("opt_g.", meta.opt_g_steps, lookup)?;
        t.opt_d.load_state("opt_d.", meta.opt_d_steps, lookup)?;
        t.step = meta.step;
        Ok(t)
    }

    /// Runs `steps` more steps, writing one JSON record per step to `log` and
    /// checkpoints to `checkpoint_dir` every `checkpoint_every` steps and at
    /// the end.
    pub fn run(
        &mut self,
        data: &TrainSet,
        steps: u64,
        log: &mut dyn Write,
        checkpoint_dir: Option<&Path>,
    ) -> Result<Vec<StepRecord>> {
        let mut records = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let out = self.step(data)?;
            serde_json::to_writer(&mut *log, &out.record)?;
            log.write_all(b"\n")?;
            records.push(out.record);
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 {
                    self.checkpoint()?.save(&self.checkpoint_path(dir, Some(self.step)))?;
                }
            }
        }
        log.flush()?;
        if let Some(dir) = checkpoint_dir {
            self.checkpoint()?.save(&self.checkpoint_path(dir, None))?;
        }
        Ok(records)
    }

    /// `<dir>/<stage>_step<N>.safetensors`, or `<stage>_latest` without a step.
    pub fn checkpoint_path(&self, dir: &Path, step: Option<u64>) -> PathBuf {
        let stage = serde_json::to_value(self.stage)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        match step {
            Some(s) => dir.join(format!("{stage}_step{s:06}.safetensors")),
            None => dir.join(format!("{stage}_latest.safetensors")),
        }
    }
}

/// Trainer metadata of a checkpoint written by [`Trainer::checkpoint`].
pub fn trainer_meta(ck: &Checkpoint) -> Result<TrainerMeta> {
    let raw = ck
        .meta
        .trainer
        .clone()
        .ok_or_else(|| Error::MalformedCheckpoint("checkpoint has no trainer metadata".into()))?;
    serde_json::from_value(raw).map_err(|e| Error::MalformedCheckpoint(format!("trainer metadata: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(store: &ParamStore) -> Vec<Vec<f32>> {
        store
            .state("")
            .into_iter()
            .map(|(_, t)| t.flatten_all().unwrap().to_vec1().unwrap())
            .collect()
    }

    #[test]
    fn generator_side_forward_keeps_discriminator_state() {
        let t = Trainer::new(TrainStage::Image, TrainConfig::desk(), 8, 16, &Device::Cpu).unwrap();
        let before = state(t.discriminator.params());
        let x = Tensor::randn(0f32, 1.0, (2, discriminator_in_channels(TrainStage::Image, 8), 64, 64), &Device::Cpu).unwrap();
        t.generator_side_logits(&x).unwrap();
        assert_eq!(before, state(t.discriminator.params()));
        // A plain training forward does advance the buffers.
        t.discriminator.forward(&x, Mode::Train).unwrap();
        assert_ne!(before, state(t.discriminator.params()));
    }
}
