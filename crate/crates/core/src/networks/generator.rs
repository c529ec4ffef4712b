use candle_core::{DType, Device, Tensor};

use super::blocks::{ResBlock, SpadeBlock};
use super::layers::{leaky_relu, BatchNorm2d, Conv2d, ConvOptions, LayerInfo, Mode, ParamStore};
use super::spec::{BlockKind, DecoderEntry, FinalActivation, GeneratorSpec};
use crate::error::{invalid, Error, Result};

#[derive(Debug)]
enum DecoderStage {
    Residual(ResBlock),
    Spade(SpadeBlock),
    Upsample,
}

/// Encoder–decoder generator built from a [`GeneratorSpec`].
#[derive(Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    encoder: Vec<(Conv2d, BatchNorm2d)>,
    decoder: Vec<DecoderStage>,
    final_conv: Conv2d,
    store: ParamStore,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64, device: &Device, dtype: DType) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(seed, device, dtype);
        let enc = &spec.encoder;
        let mut channels = spec.in_channels;
        let mut encoder = Vec::with_capacity(enc.layers.len());
        for (i, l) in enc.layers.iter().enumerate() {
            let conv = Conv2d::new(
                &mut store,
                &format!("enc.{i}.conv"),
                channels,
                l.out_channels,
                l.kernel,
                ConvOptions::same(l.kernel)
                    .stride(l.stride)
                    .bias(false)
                    .spectral_norm(enc.spectral_norm),
            )?;
            let bn = BatchNorm2d::new(&mut store, &format!("enc.{i}.bn"), l.out_channels, true)?;
            encoder.push((conv, bn));
            channels = l.out_channels;
        }

        let dec = &spec.decoder;
        let mut decoder = Vec::with_capacity(dec.entries.len());
        for (i, entry) in dec.entries.iter().enumerate() {
            let stage = match (*entry, dec.block) {
                (DecoderEntry::Upsample, _) => DecoderStage::Upsample,
                (DecoderEntry::Block { out_channels }, BlockKind::Residual) => {
                    let b = ResBlock::new(
                        &mut store,
                        &format!("dec.{i}"),
                        channels,
                        out_channels,
                        dec.spectral_norm,
                        dec.leaky_slope,
                    )?;
                    channels = out_channels;
                    DecoderStage::Residual(b)
                }
                (
                    DecoderEntry::Block { out_channels },
                    BlockKind::Spade {
                        hidden,
                        condition_channels,
                    },
                ) => {
                    let b = SpadeBlock::new(
                        &mut store,
                        &format!("dec.{i}"),
                        channels,
                        out_channels,
                        condition_channels,
                        hidden,
                        dec.spectral_norm,
                        dec.leaky_slope,
                    )?;
                    channels = out_channels;
                    DecoderStage::Spade(b)
                }
            };
            decoder.push(stage);
        }
        let final_conv = Conv2d::new(
            &mut store,
            "final",
            channels,
            dec.out_channels,
            dec.final_kernel,
            ConvOptions::same(dec.final_kernel).spectral_norm(dec.spectral_norm),
        )?;
        Ok(Self {
            spec,
            encoder,
            decoder,
            final_conv,
            store,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn fingerprint(&self) -> String {
        self.spec.fingerprint()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (_, c, h, w) = input.dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let f = self.spec.encoder.downsample_factor();
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(invalid(format!(
                "spatial size {h}x{w} is not a positive multiple of {f}"
            )));
        }
        Ok(())
    }

    /// Encoder output (the latent feature map).
    pub fn encode(&self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(input)?;
        let slope = self.spec.encoder.leaky_slope;
        let mut x = input.clone();
        for (conv, bn) in &self.encoder {
            x = leaky_relu(&bn.forward(&conv.forward(&x, mode)?, mode)?, slope)?;
        }
        Ok(x)
    }

    /// Maps an NCHW input to logits (layout generators) or a tanh image.
    /// Layout-modulated decoders require `condition`.
    pub fn forward(&self, input: &Tensor, condition: Option<&Tensor>, mode: Mode) -> Result<Tensor> {
        let condition = match (self.spec.condition_channels(), condition) {
            (Some(c), Some(t)) => {
                let (n, tc, th, tw) = t.dims4()?;
                let (ni, _, h, w) = input.dims4()?;
                if tc != c || n != ni || th != h || tw != w {
                    return Err(Error::ShapeMismatch(format!(
                        "condition has shape {:?}, expected ({ni}, {c}, {h}, {w})",
                        t.dims()
                    )));
                }
                Some(t)
            }
            (Some(_), None) => return Err(invalid("this generator needs a layout condition")),
            (None, _) => None,
        };
        let mut x = self.encode(input, mode)?;
        for stage in &self.decoder {
            x = match stage {
                DecoderStage::Upsample => {
                    let (_, _, h, w) = x.dims4()?;
                    x.upsample_nearest2d(h * 2, w * 2)?
                }
                DecoderStage::Residual(b) => b.forward(&x, mode)?,
                DecoderStage::Spade(b) => b.forward(&x, condition.expect("checked above"), mode)?,
            };
        }
        let x = leaky_relu(&x, self.spec.decoder.leaky_slope)?;
        let x = self.final_conv.forward(&x, mode)?;
        Ok(match self.spec.decoder.final_activation {
            FinalActivation::None => x,
            FinalActivation::Tanh => x.tanh()?,
        })
    }

    /// Encoder layers, then decoder block convs in order, then the output conv.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut v: Vec<LayerInfo> = self.encoder.iter().map(|(c, _)| c.info(true)).collect();
        v.extend(self.decoder_layers());
        v
    }

    pub fn encoder_layers(&self) -> Vec<LayerInfo> {
        self.encoder.iter().map(|(c, _)| c.info(true)).collect()
    }

    fn decoder_layers(&self) -> Vec<LayerInfo> {
        let mut v = Vec::new();
        for stage in &self.decoder {
            match stage {
                DecoderStage::Residual(b) => v.extend(b.layers()),
                DecoderStage::Spade(b) => v.extend(b.layers()),
                DecoderStage::Upsample => {}
            }
        }
        v.push(self.final_conv.info(false));
        v
    }

    /// Output width of each decoder block followed by whether an upsample
    /// comes next, as instantiated.
    pub fn decoder_table(&self) -> Vec<DecoderEntry> {
        let mut out = Vec::new();
        for stage in &self.decoder {
            out.push(match stage {
                DecoderStage::Upsample => DecoderEntry::Upsample,
                DecoderStage::Residual(b) => DecoderEntry::Block {
                    out_channels: b.layers()[1].out_channels,
                },
                DecoderStage::Spade(b) => DecoderEntry::Block {
                    out_channels: b.layers()[1].out_channels,
                },
            });
        }
        out
    }
}
