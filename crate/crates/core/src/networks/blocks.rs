use candle_core::Tensor;

use super::layers::{leaky_relu, resize_nearest, BatchNorm2d, Conv2d, ConvOptions, LayerInfo, Mode, Padding, ParamStore};
use crate::error::Result;

/// Pre-activation residual block with a learned 1×1 shortcut when the width changes.
#[derive(Debug)]
pub struct ResBlock {
    norm1: BatchNorm2d,
    conv1: Conv2d,
    norm2: BatchNorm2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
    slope: f64,
}

impl ResBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fin: usize,
        fout: usize,
        spectral_norm: bool,
        slope: f64,
    ) -> Result<Self> {
        let conv = ConvOptions::same(3).spectral_norm(spectral_norm);
        Ok(Self {
            norm1: BatchNorm2d::new(store, &format!("{name}.norm1"), fin, true)?,
            // Followed by batch norm, so a bias would be cancelled.
            conv1: Conv2d::new(store, &format!("{name}.conv1"), fin, fout, 3, conv.bias(false))?,
            norm2: BatchNorm2d::new(store, &format!("{name}.norm2"), fout, true)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), fout, fout, 3, conv)?,
            shortcut: (fin != fout)
                .then(|| {
                    Conv2d::new(
                        store,
                        &format!("{name}.shortcut"),
                        fin,
                        fout,
                        1,
                        ConvOptions::same(1).bias(false).spectral_norm(spectral_norm),
                    )
                })
                .transpose()?,
            slope,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.conv1.forward(&leaky_relu(&self.norm1.forward(x, mode)?, self.slope)?, mode)?;
        let h = self.conv2.forward(&leaky_relu(&self.norm2.forward(&h, mode)?, self.slope)?, mode)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(x, mode)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut v = vec![self.conv1.info(true), self.conv2.info(true)];
        v.extend(self.shortcut.iter().map(|s| s.info(false)));
        v
    }
}

/// Spatially-adaptive normalization: parameter-free batch norm followed by a
/// per-pixel scale and shift predicted from the condition map.
#[derive(Debug)]
pub struct Spade {
    norm: BatchNorm2d,
    shared: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
}

impl Spade {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        condition_channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        let conv = ConvOptions::same(3).padding(Padding::Replicate(1));
        Ok(Self {
            norm: BatchNorm2d::new(store, &format!("{name}.norm"), channels, false)?,
            shared: Conv2d::new(store, &format!("{name}.shared"), condition_channels, hidden, 3, conv)?,
            gamma: Conv2d::new(store, &format!("{name}.gamma"), hidden, channels, 3, conv)?,
            beta: Conv2d::new(store, &format!("{name}.beta"), hidden, channels, 3, conv)?,
        })
    }

    /// `condition` is resized (nearest) to the feature resolution.
    pub fn forward(&self, x: &Tensor, condition: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let normalized = self.norm.forward(x, mode)?;
        let cond = resize_nearest(condition, h, w)?;
        let actv = self.shared.forward(&cond, mode)?.relu()?;
        let gamma = self.gamma.forward(&actv, mode)?;
        let beta = self.beta.forward(&actv, mode)?;
        Ok(((normalized * (gamma + 1.0)?)? + beta)?)
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        vec![self.shared.info(false), self.gamma.info(false), self.beta.info(false)]
    }
}

/// Residual block whose normalizations are [`Spade`] units.
#[derive(Debug)]
pub struct SpadeBlock {
    norm0: Spade,
    conv0: Conv2d,
    norm1: Spade,
    conv1: Conv2d,
    shortcut: Option<(Spade, Conv2d)>,
    slope: f64,
}

impl SpadeBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fin: usize,
        fout: usize,
        condition_channels: usize,
        hidden: usize,
        spectral_norm: bool,
        slope: f64,
    ) -> Result<Self> {
        let fmid = fin.min(fout);
        let conv = ConvOptions::same(3).spectral_norm(spectral_norm);
        let shortcut = if fin != fout {
            Some((
                Spade::new(store, &format!("{name}.norm_s"), fin, condition_channels, hidden)?,
                Conv2d::new(
                    store,
                    &format!("{name}.conv_s"),
                    fin,
                    fout,
                    1,
                    ConvOptions::same(1).bias(false).spectral_norm(spectral_norm),
                )?,
            ))
        } else {
            None
        };
        Ok(Self {
            norm0: Spade::new(store, &format!("{name}.norm0"), fin, condition_channels, hidden)?,
            conv0: Conv2d::new(store, &format!("{name}.conv0"), fin, fmid, 3, conv.bias(false))?,
            norm1: Spade::new(store, &format!("{name}.norm1"), fmid, condition_channels, hidden)?,
            conv1: Conv2d::new(store, &format!("{name}.conv1"), fmid, fout, 3, conv)?,
            shortcut,
            slope,
        })
    }

    pub fn forward(&self, x: &Tensor, condition: &Tensor, mode: Mode) -> Result<Tensor> {
        let skip = match &self.shortcut {
            Some((norm, conv)) => conv.forward(&norm.forward(x, condition, mode)?, mode)?,
            None => x.clone(),
        };
        let h = leaky_relu(&self.norm0.forward(x, condition, mode)?, self.slope)?;
        let h = self.conv0.forward(&h, mode)?;
        let h = leaky_relu(&self.norm1.forward(&h, condition, mode)?, self.slope)?;
        let h = self.conv1.forward(&h, mode)?;
        Ok((skip + h)?)
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut v = vec![self.conv0.info(false), self.conv1.info(false)];
        if let Some((norm, conv)) = &self.shortcut {
            v.push(conv.info(false));
            v.extend(norm.layers());
        }
        v.extend(self.norm0.layers());
        v.extend(self.norm1.layers());
        v
    }
}
