use candle_core::{DType, Device, Tensor};

use super::layers::{leaky_relu, BatchNorm2d, Conv2d, ConvOptions, LayerInfo, Mode, Padding, ParamStore};
use super::spec::DiscriminatorSpec;
use crate::error::{invalid, Error, Result};

#[derive(Debug)]
struct PatchLayer {
    conv: Conv2d,
    norm: Option<BatchNorm2d>,
    activation: bool,
}

/// Multi-scale patch discriminator: scale `k` sees the input average-pooled
/// `k` times by a factor of two and emits its own grid of patch logits.
#[derive(Debug)]
pub struct MultiScaleDiscriminator {
    spec: DiscriminatorSpec,
    scales: Vec<Vec<PatchLayer>>,
    store: ParamStore,
}

impl MultiScaleDiscriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64, device: &Device, dtype: DType) -> Result<Self> {
        if spec.num_scales == 0 || spec.layers.is_empty() || spec.in_channels == 0 {
            return Err(invalid("discriminator needs scales, layers and input channels"));
        }
        let mut store = ParamStore::new(seed, device, dtype);
        let last = spec.layers.len() - 1;
        let mut scales = Vec::with_capacity(spec.num_scales);
        for s in 0..spec.num_scales {
            let mut channels = spec.in_channels;
            let mut layers = Vec::with_capacity(spec.layers.len());
            for (i, l) in spec.layers.iter().enumerate() {
                let normalized = spec.is_normalized(i);
                let name = format!("scale{s}.{i}");
                let conv = Conv2d::new(
                    &mut store,
                    &format!("{name}.conv"),
                    channels,
                    l.out_channels,
                    l.kernel,
                    ConvOptions::same(l.kernel)
                        .padding(Padding::Zeros(spec.padding))
                        .stride(l.stride)
                        .bias(!normalized)
                        .spectral_norm(normalized),
                )?;
                let norm = normalized
                    .then(|| BatchNorm2d::new(&mut store, &format!("{name}.bn"), l.out_channels, true))
                    .transpose()?;
                layers.push(PatchLayer {
                    conv,
                    norm,
                    activation: i != last,
                });
                channels = l.out_channels;
            }
            scales.push(layers);
        }
        Ok(Self { spec, scales, store })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn fingerprint(&self) -> String {
        self.spec.fingerprint()
    }

    /// One patch-logit map `(N, 1, h_k, w_k)` per scale.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = input.dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects {} channels, got {c}",
                self.spec.in_channels
            )));
        }
        let min = self.spec.min_input_size();
        if h < min || w < min {
            return Err(invalid(format!(
                "input {h}x{w} is smaller than the {min}x{min} receptive footprint"
            )));
        }
        let mut x = input.clone();
        let mut out = Vec::with_capacity(self.scales.len());
        for (k, layers) in self.scales.iter().enumerate() {
            if k > 0 {
                x = x.avg_pool2d(2)?;
            }
            let mut y = x.clone();
            for l in layers {
                y = l.conv.forward(&y, mode)?;
                if let Some(n) = &l.norm {
                    y = n.forward(&y, mode)?;
                }
                if l.activation {
                    y = leaky_relu(&y, self.spec.leaky_slope)?;
                }
            }
            out.push(y);
        }
        Ok(out)
    }

    /// Layer table of one scale (all scales share the same table).
    pub fn scale_layers(&self, scale: usize) -> Vec<LayerInfo> {
        self.scales[scale]
            .iter()
            .map(|l| l.conv.info(l.norm.is_some()))
            .collect()
    }
}
