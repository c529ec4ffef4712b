//! Parameter storage and the primitive layers the networks are assembled from.

use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;
/// Power iterations run once when a spectrally-normalized layer is created.
pub const SPECTRAL_INIT_ITERATIONS: usize = 20;

/// Forward-pass mode. `Train` uses batch statistics and advances running
/// buffers; `Eval` reads the running buffers only and is side-effect free.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Non-trainable state (running statistics, power-iteration vectors).
#[derive(Clone, Debug)]
pub struct Buffer(Arc<Mutex<Tensor>>);

impl Buffer {
    fn new(t: Tensor) -> Self {
        Self(Arc::new(Mutex::new(t)))
    }

    pub fn get(&self) -> Tensor {
        self.0.lock().expect("buffer lock poisoned").clone()
    }

    pub fn set(&self, t: Tensor) {
        *self.0.lock().expect("buffer lock poisoned") = t.detach();
    }
}

/// Named trainable variables and buffers of one network, in creation order.
#[derive(Debug)]
pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    params: Vec<(String, Var)>,
    buffers: Vec<(String, Buffer)>,
}

impl ParamStore {
    pub fn new(seed: u64, device: &Device, dtype: DType) -> Self {
        Self {
            device: device.clone(),
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn gaussian_tensor(&mut self, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(mean, std).expect("positive std");
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    pub fn gaussian(&mut self, name: String, shape: &[usize], mean: f64, std: f64) -> Result<Var> {
        let t = self.gaussian_tensor(shape, mean, std)?;
        let v = Var::from_tensor(&t)?;
        self.params.push((name, v.clone()));
        Ok(v)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<Var> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        let v = Var::from_tensor(&t)?;
        self.params.push((name, v.clone()));
        Ok(v)
    }

    pub fn buffer(&mut self, name: String, t: Tensor) -> Buffer {
        let b = Buffer::new(t);
        self.buffers.push((name, b.clone()));
        b
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn buffers(&self) -> &[(String, Buffer)] {
        &self.buffers
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Every parameter and buffer under `prefix`.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, v)| (format!("{prefix}{n}"), v.as_tensor().clone()))
            .collect();
        out.extend(self.buffers.iter().map(|(n, b)| (format!("{prefix}{n}"), b.get())));
        out
    }

    /// SHA-256 over every parameter and buffer name and its f32 values.
    pub fn digest(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in self.state("") {
            h.update(name.as_bytes());
            h.update(format!("{:?}", t.dims()).as_bytes());
            for x in t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Overwrites every parameter and buffer from `lookup`; missing names or
    /// shape disagreements are errors.
    pub fn load_state(&self, prefix: &str, lookup: impl Fn(&str) -> Option<Tensor>) -> Result<()> {
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let full = format!("{prefix}{name}");
            let t = lookup(&full)
                .ok_or_else(|| Error::MalformedCheckpoint(format!("missing tensor '{full}'")))?;
            if t.dims() != shape {
                return Err(Error::MalformedCheckpoint(format!(
                    "tensor '{full}' has shape {:?}, expected {:?}",
                    t.dims(),
                    shape
                )));
            }
            Ok(t.to_dtype(self.dtype)?.to_device(&self.device)?)
        };
        for (n, v) in &self.params {
            v.set(&fetch(n, v.dims())?)?;
        }
        for (n, b) in &self.buffers {
            let shape = b.get().dims().to_vec();
            b.set(fetch(n, &shape)?);
        }
        Ok(())
    }
}

/// Per-layer description reported by instantiated networks, read from the
/// actual weight shapes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub spectral_norm: bool,
    pub batch_norm: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zeros(usize),
    /// Edge replication, so a constant input gives a constant output.
    Replicate(usize),
}

#[derive(Debug)]
struct SpectralNorm {
    u: Buffer,
}

#[derive(Debug)]
pub struct Conv2d {
    name: String,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: Padding,
    spectral: Option<SpectralNorm>,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: Padding,
    pub bias: bool,
    pub spectral_norm: bool,
}

impl ConvOptions {
    /// "Same" zero padding for odd kernels.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: Padding::Zeros(kernel / 2),
            bias: true,
            spectral_norm: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn spectral_norm(mut self, sn: bool) -> Self {
        self.spectral_norm = sn;
        self
    }

    pub fn padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }
}

fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let norm = v.sqr()?.sum_all()?.sqrt()?;
    Ok(v.broadcast_div(&(norm + 1e-12)?)?)
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        opts: ConvOptions,
    ) -> Result<Self> {
        let weight = store.gaussian(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            0.0,
            INIT_STD,
        )?;
        let bias = if opts.bias {
            Some(store.constant(format!("{name}.bias"), &[out_channels], 0.0)?)
        } else {
            None
        };
        let spectral = if opts.spectral_norm {
            let mut u = l2_normalize(&store.gaussian_tensor(&[out_channels], 0.0, 1.0)?)?;
            let w = weight.as_tensor().detach().reshape((out_channels, ()))?;
            for _ in 0..SPECTRAL_INIT_ITERATIONS {
                u = power_step(&w, &u)?.0;
            }
            Some(SpectralNorm {
                u: store.buffer(format!("{name}.sn_u"), u),
            })
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            stride: opts.stride,
            padding: opts.padding,
            spectral,
        })
    }

    pub fn info(&self, batch_norm: bool) -> LayerInfo {
        let (o, i, k, _) = self.weight.dims4().expect("4d weight");
        LayerInfo {
            name: self.name.clone(),
            kernel: k,
            stride: self.stride,
            in_channels: i,
            out_channels: o,
            spectral_norm: self.spectral.is_some(),
            batch_norm,
        }
    }

    pub fn raw_weight(&self) -> &Var {
        &self.weight
    }

    /// The weight used by the forward pass: divided by its estimated largest
    /// singular value when spectral norm is on. One power iteration per call;
    /// the iterate is persisted only in training mode.
    pub fn effective_weight(&self, mode: Mode) -> Result<Tensor> {
        let w = self.weight.as_tensor();
        let Some(sn) = &self.spectral else {
            return Ok(w.clone());
        };
        let out = w.dim(0)?;
        let mat = w.reshape((out, ()))?;
        let (u, v) = power_step(&mat.detach(), &sn.u.get())?;
        if mode == Mode::Train {
            sn.u.set(u.clone());
        }
        // sigma = uᵀ W v, differentiable in W.
        let sigma = u
            .unsqueeze(0)?
            .matmul(&mat)?
            .matmul(&v.unsqueeze(1)?)?
            .reshape(())?;
        Ok(w.broadcast_div(&sigma)?)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = self.effective_weight(mode)?;
        let (x, pad) = match self.padding {
            Padding::Zeros(p) => (x.clone(), p),
            Padding::Replicate(0) => (x.clone(), 0),
            Padding::Replicate(p) => (x.pad_with_same(2, p, p)?.pad_with_same(3, p, p)?, 0),
        };
        let y = x.conv2d(&w, pad, self.stride, 1, 1)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }
}

/// One power-iteration step on a detached matrix: returns the updated (u, v).
fn power_step(mat: &Tensor, u: &Tensor) -> Result<(Tensor, Tensor)> {
    let v = l2_normalize(&mat.t()?.matmul(&u.unsqueeze(1)?)?.squeeze(1)?)?;
    let u = l2_normalize(&mat.matmul(&v.unsqueeze(1)?)?.squeeze(1)?)?;
    Ok((u, v))
}

/// Batch normalization over (N, H, W) per channel.
///
/// Statistics are those of the local batch. Multi-device runs must all-reduce
/// the per-channel sums and sums of squares before normalizing to reproduce
/// synchronized behaviour; this implementation is single-device.
#[derive(Debug)]
pub struct BatchNorm2d {
    affine: Option<(Var, Var)>,
    running_mean: Buffer,
    running_var: Buffer,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, affine: bool) -> Result<Self> {
        let affine = if affine {
            Some((
                store.constant(format!("{name}.weight"), &[channels], 1.0)?,
                store.constant(format!("{name}.bias"), &[channels], 0.0)?,
            ))
        } else {
            None
        };
        let (dev, dt) = (store.device().clone(), store.dtype());
        let running_mean = store.buffer(format!("{name}.running_mean"), Tensor::zeros(channels, dt, &dev)?);
        let running_var = store.buffer(format!("{name}.running_var"), Tensor::ones(channels, dt, &dev)?);
        Ok(Self {
            affine,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let count = (n * h * w) as f64;
                let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let m = self.momentum;
                let rm = ((self.running_mean.get() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
                let rv = ((self.running_var.get() * (1.0 - m))?
                    + (var.detach().flatten_all()? * (m * unbiased))?)?;
                self.running_mean.set(rm);
                self.running_var.set(rv);
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.get().reshape((1, c, 1, 1))?,
                self.running_var.get().reshape((1, c, 1, 1))?,
            ),
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(match &self.affine {
            Some((g, b)) => normed
                .broadcast_mul(&g.as_tensor().reshape((1, c, 1, 1))?)?
                .broadcast_add(&b.as_tensor().reshape((1, c, 1, 1))?)?,
            None => normed,
        })
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

/// Nearest-neighbour resize of an NCHW tensor. Integer up- and down-scaling
/// factors stay differentiable.
pub fn resize_nearest(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    if height % h == 0 && width % w == 0 && height / h == width / w {
        return Ok(x.upsample_nearest2d(height, width)?);
    }
    if h % height == 0 && w % width == 0 {
        let (kh, kw) = (h / height, w / width);
        return Ok(x
            .contiguous()?
            .reshape((n * c, height, kh, width, kw))?
            .narrow(2, 0, 1)?
            .narrow(4, 0, 1)?
            .contiguous()?
            .reshape((n, c, height, width))?);
    }
    Ok(x.interpolate2d(height, width)?)
}

/// Mean over the last three axes, one value per batch element.
pub fn per_sample_mean(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.mean(D::Minus1)?)
}
