use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

/// Frozen multi-stage feature network used by the perceptual loss.
pub trait FeatureExtractor: Send + Sync {
    fn num_stages(&self) -> usize;
    /// Features of an NCHW image batch in `[-1, 1]`, one tensor per stage.
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>>;
    fn id(&self) -> String;
}

/// Fixed-seed random conv net. Stage `i > 0` starts with a 2×2 average pool
/// (skipped once the map is 1 pixel wide), then every stage is a 3×3
/// zero-padded conv with bias followed by ReLU.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    seed: u64,
    stages: Vec<(Tensor, Tensor)>,
}

impl RandomConvExtractor {
    pub fn new(seed: u64, widths: &[usize], dtype: DType) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut stages = Vec::with_capacity(widths.len());
        for &cout in widths {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let w: Vec<f64> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..cout).map(|_| normal.sample(&mut rng) * 0.1).collect();
            let w = Tensor::from_vec(w, (cout, cin, 3, 3), &Device::Cpu)
                .and_then(|t| t.to_dtype(dtype))
                .expect("weight tensor");
            let b = Tensor::from_vec(b, cout, &Device::Cpu)
                .and_then(|t| t.to_dtype(dtype))
                .expect("bias tensor");
            stages.push((w, b));
            cin = cout;
        }
        Self { seed, stages }
    }

    /// Five-stage extractor used by tests and the desk profile.
    pub fn standard(seed: u64, dtype: DType) -> Self {
        Self::new(seed, &[8, 16, 16, 32, 32], dtype)
    }

    /// `(weight, bias)` of each stage.
    pub fn weights(&self) -> &[(Tensor, Tensor)] {
        &self.stages
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = images.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, (w, b)) in self.stages.iter().enumerate() {
            let (_, _, h, wd) = x.dims4()?;
            if i > 0 && h >= 2 && wd >= 2 {
                x = x.avg_pool2d(2)?;
            }
            let y = x.conv2d(w, 1, 1, 1, 1)?;
            x = y.broadcast_add(&b.reshape((1, (), 1, 1))?)?.relu()?;
            out.push(x.clone());
        }
        Ok(out)
    }

    fn id(&self) -> String {
        let widths: Vec<String> = self.stages.iter().map(|(w, _)| w.dims()[0].to_string()).collect();
        format!("random-conv-{}-s{}", widths.join("x"), self.seed)
    }
}

enum VggOp {
    Conv(usize),
    Pool,
}

const VGG19_WIDTHS: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256, 256], &[512, 512, 512, 512], &[512, 512, 512, 512]];
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// VGG-19 feature trunk read from a safetensors file with torchvision
/// `features.{idx}.weight` / `features.{idx}.bias` names. Stages end at
/// relu1_1, relu2_1, relu3_1, relu4_1 and relu5_1.
pub struct Vgg19Extractor {
    convs: Vec<(Tensor, Tensor)>,
    stages: Vec<Vec<VggOp>>,
    mean: Tensor,
    std: Tensor,
    source: String,
}

impl std::fmt::Debug for Vgg19Extractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vgg19Extractor").field("source", &self.source).finish()
    }
}

/// torchvision `features` indices of the 16 convs.
pub fn vgg19_conv_indices() -> Vec<usize> {
    let mut idx = Vec::new();
    let mut i = 0;
    for block in VGG19_WIDTHS {
        for _ in block.iter() {
            idx.push(i);
            i += 2;
        }
        i += 1;
    }
    idx
}

/// Expected `(out, in)` channels of each conv.
pub fn vgg19_conv_channels() -> Vec<(usize, usize)> {
    let mut cin = 3;
    let mut out = Vec::new();
    for block in VGG19_WIDTHS {
        for &c in block.iter() {
            out.push((c, cin));
            cin = c;
        }
    }
    out
}

impl Vgg19Extractor {
    pub fn load(path: &Path, device: &Device, dtype: DType) -> Result<Self> {
        let tensors = candle_core::safetensors::load(path, device)
            .map_err(|e| Error::MalformedCheckpoint(format!("{}: {e}", path.display())))?;
        let convs = vgg19_conv_indices()
            .into_iter()
            .zip(vgg19_conv_channels())
            .map(|(i, (cout, cin))| {
                let get = |suffix: &str| {
                    tensors
                        .get(&format!("features.{i}.{suffix}"))
                        .ok_or_else(|| Error::MalformedCheckpoint(format!("missing features.{i}.{suffix}")))
                };
                let w = get("weight")?;
                let b = get("bias")?;
                if w.dims() != [cout, cin, 3, 3] || b.dims() != [cout] {
                    return Err(Error::MalformedCheckpoint(format!(
                        "features.{i} has shape {:?}, expected ({cout}, {cin}, 3, 3)",
                        w.dims()
                    )));
                }
                Ok((w.to_dtype(dtype)?, b.to_dtype(dtype)?))
            })
            .collect::<Result<Vec<_>>>()?;

        // relu_k_1 ends stage k: the first conv of block k, preceded by the
        // rest of block k-1 and its pool.
        let mut stages: Vec<Vec<VggOp>> = Vec::new();
        let mut conv = 0;
        let mut current = vec![VggOp::Conv(conv)];
        conv += 1;
        stages.push(std::mem::take(&mut current));
        for block in 0..4 {
            for _ in 1..VGG19_WIDTHS[block].len() {
                current.push(VggOp::Conv(conv));
                conv += 1;
            }
            current.push(VggOp::Pool);
            current.push(VggOp::Conv(conv));
            conv += 1;
            stages.push(std::mem::take(&mut current));
        }
        let to = |v: [f32; 3]| -> Result<Tensor> {
            Ok(Tensor::new(&v, device)?.reshape((1, 3, 1, 1))?.to_dtype(dtype)?)
        };
        Ok(Self {
            convs,
            stages,
            mean: to(IMAGENET_MEAN)?,
            std: to(IMAGENET_STD)?,
            source: path.display().to_string(),
        })
    }
}

impl FeatureExtractor for Vgg19Extractor {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 || h < 16 || w < 16 {
            return Err(invalid(format!("VGG features need 3×16×16 or larger, got {c}×{h}×{w}")));
        }
        let x = ((images + 1.0)? * 0.5)?;
        let mut x = x.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for op in stage {
                x = match op {
                    VggOp::Pool => x.max_pool2d(2)?,
                    VggOp::Conv(i) => {
                        let (wt, b) = &self.convs[*i];
                        x.conv2d(wt, 1, 1, 1, 1)?
                            .broadcast_add(&b.reshape((1, (), 1, 1))?)?
                            .relu()?
                    }
                };
            }
            out.push(x.clone());
        }
        Ok(out)
    }

    fn id(&self) -> String {
        format!("vgg19:{}", self.source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn torchvision_indices() {
        assert_eq!(
            vgg19_conv_indices(),
            vec![0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]
        );
    }

    #[test]
    fn vgg_loads_and_produces_five_stages() {
        let dev = Device::Cpu;
        let mut map = HashMap::new();
        for (i, (cout, cin)) in vgg19_conv_indices().into_iter().zip(vgg19_conv_channels()) {
            map.insert(
                format!("features.{i}.weight"),
                Tensor::randn(0f32, 0.05, (cout, cin, 3, 3), &dev).unwrap(),
            );
            map.insert(format!("features.{i}.bias"), Tensor::zeros(cout, DType::F32, &dev).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg.safetensors");
        candle_core::safetensors::save(&map, &path).unwrap();
        let vgg = Vgg19Extractor::load(&path, &dev, DType::F32).unwrap();
        let x = Tensor::zeros((1, 3, 32, 32), DType::F32, &dev).unwrap();
        let f = vgg.features(&x).unwrap();
        let dims: Vec<Vec<usize>> = f.iter().map(|t| t.dims().to_vec()).collect();
        assert_eq!(
            dims,
            vec![
                vec![1, 64, 32, 32],
                vec![1, 128, 16, 16],
                vec![1, 256, 8, 8],
                vec![1, 512, 4, 4],
                vec![1, 512, 2, 2]
            ]
        );

        map.remove("features.34.bias");
        candle_core::safetensors::save(&map, &path).unwrap();
        assert!(Vgg19Extractor::load(&path, &dev, DType::F32).is_err());
    }

    #[test]
    fn random_extractor_is_seeded() {
        let a = RandomConvExtractor::standard(9, DType::F32);
        let b = RandomConvExtractor::standard(9, DType::F32);
        let x = Tensor::randn(0f32, 0.5, (2, 3, 8, 8), &Device::Cpu).unwrap();
        let (fa, fb) = (a.features(&x).unwrap(), b.features(&x).unwrap());
        assert_eq!(fa.len(), 5);
        for (p, q) in fa.iter().zip(&fb) {
            let d: f32 = (p - q).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
            assert_eq!(d, 0.0);
        }
        assert_eq!(fa[4].dims(), &[2, 32, 1, 1]);
    }
}
