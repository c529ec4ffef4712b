//! Fréchet distance between feature distributions and side-by-side grids.

use std::path::Path;

use image::RgbImage;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout_data::{resize_layout, resize_pixels, Palette, Pixels, SemanticLayout};

/// Eigenvalues down to this (relative to the largest) are treated as zero.
pub const EIGEN_TOLERANCE: f64 = 1e-6;

/// Mean and covariance of a feature sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `d × d`, unbiased (`n − 1`); all zero for fewer than two samples.
    pub cov: Vec<f64>,
    pub count: u64,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fewer samples than dimensions: the covariance is rank-deficient.
    pub fn underdetermined(&self) -> bool {
        (self.count as usize) < self.dim()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

/// Streaming mean/covariance (Welford), mergeable across shards.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    n: u64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature of length {} pushed into {}-d stats",
                feature.len(),
                self.dim()
            )));
        }
        let x = DVector::from_column_slice(feature);
        self.n += 1;
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
        Ok(())
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::ShapeMismatch("merging stats of different dimension".into()));
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean += &delta * (nb / n);
        self.m2 += &other.m2 + (&delta * delta.transpose()) * (na * nb / n);
        self.n += other.n;
        Ok(())
    }

    pub fn finish(&self) -> FeatureStats {
        let d = self.dim();
        let cov = if self.n < 2 {
            vec![0.0; d * d]
        } else {
            let c = &self.m2 / (self.n - 1) as f64;
            // Symmetrize away rounding asymmetry.
            let c = (&c + c.transpose()) * 0.5;
            c.transpose().as_slice().to_vec()
        };
        FeatureStats {
            mean: self.mean.as_slice().to_vec(),
            cov,
            count: self.n,
        }
    }
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let eig = SymmetricEigen::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::NotConverged("symmetric eigendecomposition".into()))?;
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut roots = Vec::with_capacity(eig.eigenvalues.len());
    for &l in eig.eigenvalues.iter() {
        if l < -EIGEN_TOLERANCE * scale {
            return Err(Error::NotConverged(format!(
                "matrix is not positive semi-definite (eigenvalue {l})"
            )));
        }
        roots.push(l.max(0.0).sqrt());
    }
    let d = DMatrix::from_diagonal(&DVector::from_vec(roots.clone()));
    Ok((&eig.eigenvectors * d * eig.eigenvectors.transpose(), roots))
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^½)`, with the trace of the root taken
/// from the eigenvalues of the symmetric `Σa^½ Σb Σa^½`.
/// Rounding noise below zero is clamped to zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let d = a.dim();
    if d == 0 || b.dim() != d || a.cov.len() != d * d || b.cov.len() != d * d {
        return Err(Error::ShapeMismatch(format!(
            "stats dimensions {} and {} differ or are empty",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let (ca, cb) = (a.cov_matrix(), b.cov_matrix());
    let (sa, _) = sqrt_psd(&ca)?;
    let inner = &sa * &cb * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let (_, roots) = sqrt_psd(&inner)?;
    let tr_root: f64 = roots.iter().sum();
    let value = mean_term + ca.trace() + cb.trace() - 2.0 * tr_root;
    Ok(value.max(0.0))
}

/// Maps an image to a fixed-length feature vector.
pub trait ImageEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, image: &Pixels) -> Result<Vec<f64>>;
    fn id(&self) -> String;
}

/// Fixed-seed Gaussian projection of an 8×8 downsampled image.
#[derive(Debug, Clone)]
pub struct RandomProjectionEmbedder {
    seed: u64,
    dim: usize,
    weights: DMatrix<f64>,
}

const PROJECTION_SIDE: usize = 8;

impl RandomProjectionEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let inputs = PROJECTION_SIDE * PROJECTION_SIDE * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (inputs as f64).sqrt()).expect("positive std");
        let weights = DMatrix::from_fn(dim, inputs, |_, _| normal.sample(&mut rng));
        Self { seed, dim, weights }
    }

    /// The 16-dimensional embedder used at desk scale.
    pub fn standard(seed: u64) -> Self {
        Self::new(seed, 16)
    }
}

impl ImageEmbedder for RandomProjectionEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &Pixels) -> Result<Vec<f64>> {
        let small = resize_pixels(image, PROJECTION_SIDE, PROJECTION_SIDE);
        let x = DVector::from_iterator(small.data().len(), small.data().iter().map(|&v| f64::from(v)));
        Ok((&self.weights * x).as_slice().to_vec())
    }

    fn id(&self) -> String {
        format!("random-projection-d{}-s{}", self.dim, self.seed)
    }
}

pub fn compute_stats(images: &[Pixels], embedder: &dyn ImageEmbedder) -> Result<FeatureStats> {
    let mut acc = StatsAccumulator::new(embedder.dim());
    for img in images {
        acc.push(&embedder.embed(img)?)?;
    }
    Ok(acc.finish())
}

/// JSON summary written by the `evaluate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub dataset: String,
    pub mask_fraction: f64,
    pub fid: f64,
    pub n_images: usize,
    pub extractor_id: String,
}

pub fn fid_report(
    dataset: &str,
    mask_fraction: f64,
    real: &[Pixels],
    generated: &[Pixels],
    embedder: &dyn ImageEmbedder,
) -> Result<FidReport> {
    if real.is_empty() || generated.is_empty() {
        return Err(invalid("FID needs at least one real and one generated image"));
    }
    let fid = frechet_distance(&compute_stats(real, embedder)?, &compute_stats(generated, embedder)?)?;
    Ok(FidReport {
        dataset: dataset.to_string(),
        mask_fraction,
        fid,
        n_images: generated.len(),
        extractor_id: embedder.id(),
    })
}

/// One tile of a comparison grid.
#[derive(Debug, Clone)]
pub enum GridCell {
    Image(Pixels),
    /// Drawn with the palette colours.
    Layout(SemanticLayout),
}

/// Tiles `rows` (each with the same number of cells) into one image of
/// `cols × tile` by `rows × tile` pixels. Layouts are resized with nearest
/// neighbour so colours stay exact.
pub fn emit_grid(rows: &[Vec<GridCell>], tile: usize, palette: &Palette) -> Result<RgbImage> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || cols == 0 || tile == 0 {
        return Err(invalid("grid needs at least one row, one column and a positive tile size"));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(invalid("grid rows have different lengths"));
    }
    let mut out = RgbImage::new((cols * tile) as u32, (rows.len() * tile) as u32);
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let rgb = match cell {
                GridCell::Image(p) => resize_pixels(p, tile, tile).to_rgb8(),
                GridCell::Layout(l) => palette.colorize(&resize_layout(l, tile, tile)?)?,
            };
            image::imageops::replace(&mut out, &rgb, (c * tile) as i64, (r * tile) as i64);
        }
    }
    Ok(out)
}

pub fn write_grid(path: &Path, rows: &[Vec<GridCell>], tile: usize, palette: &Palette) -> Result<()> {
    emit_grid(rows, tile, palette)?.save(path)?;
    Ok(())
}
