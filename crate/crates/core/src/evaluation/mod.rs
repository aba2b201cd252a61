//! Sample-quality metrics (Fréchet distance between feature Gaussians and
//! an Inception-style score) and diagnostic renderings.

pub mod extractor;
pub mod visualize;

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use unetgan_autograd::Tensor;

use crate::error::{Error, Result};
pub use extractor::{FeatureExtractor, RandomConvExtractor};

/// Relative amount by which a covariance eigenvalue may be negative before
/// the statistics are rejected.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Mean and covariance of `n` feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGaussian {
    pub mu: Vec<f64>,
    /// Row-major `d×d`.
    pub sigma: Vec<f64>,
    pub n: usize,
}

impl FeatureGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, n: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.len() != d * d {
            return Err(Error::Shape(format!("covariance has {} entries for d={d}", sigma.len())));
        }
        Ok(Self { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.sigma)
    }

    /// Checks finiteness, symmetry and numerical positive semi-definiteness.
    pub fn check(&self) -> Result<()> {
        if self.mu.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian statistics".into()));
        }
        let m = self.matrix();
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-9 * scale {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        let min = SymmetricEigen::new(m).eigenvalues.min();
        if min < -PSD_TOLERANCE * scale {
            return Err(Error::InvalidArgument(format!("covariance has eigenvalue {min:e}")));
        }
        Ok(())
    }
}

/// Square root of a symmetric PSD matrix via eigendecomposition.
fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa Σb)^½)`.
///
/// The trace term uses `Tr((Σa Σb)^½) = Tr((√Σa Σb √Σa)^½)`, whose argument is
/// symmetric PSD, so it reduces to a sum of square roots of clamped
/// eigenvalues.
pub fn frechet_distance(a: &FeatureGaussian, b: &FeatureGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dims {} vs {}", a.dim(), b.dim())));
    }
    a.check()?;
    b.check()?;
    let (sa, sb) = (a.matrix(), b.matrix());
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).powi(2)).sum();
    let root_a = sqrt_psd(sa.clone());
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok((mean_term + sa.trace() + sb.trace() - 2.0 * cross).max(0.0))
}

/// `exp(mean_i KL(p_i ‖ p̄))` for rows of an `n×k` probability matrix.
pub fn inception_style_score(probs: &[f64], k: usize) -> Result<f64> {
    if k == 0 || probs.is_empty() || !probs.len().is_multiple_of(k) {
        return Err(Error::Shape(format!("{} values is not an n×{k} matrix", probs.len())));
    }
    for (i, row) in probs.chunks(k).enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("row {i} is not a probability distribution")));
        }
    }
    let n = probs.len() / k;
    let mut marginal = vec![0.0; k];
    for row in probs.chunks(k) {
        marginal.iter_mut().zip(row).for_each(|(m, p)| *m += p / n as f64);
    }
    let mean_kl = probs
        .chunks(k)
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, m)| p * (p / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    Ok(mean_kl.exp())
}

/// One-pass mean and covariance accumulator (Welford, with Chan's merge).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        let x = DVector::from_column_slice(x);
        self.n += 1;
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
    }

    /// Adds every row of a row-major `rows×d` matrix.
    pub fn push_rows(&mut self, rows: &[f64]) {
        let d = self.mean.len();
        rows.chunks(d).for_each(|r| self.push(r));
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.n == 0 {
            return;
        }
        let n = self.n + other.n;
        let delta = &other.mean - &self.mean;
        let w = (self.n * other.n) as f64 / n as f64;
        self.m2 += &other.m2 + &delta * delta.transpose() * w;
        self.mean += delta * (other.n as f64 / n as f64);
        self.n = n;
    }

    /// Sample mean and unbiased covariance; needs at least two samples.
    pub fn finish(&self) -> Result<FeatureGaussian> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("covariance needs ≥2 samples, have {}", self.n)));
        }
        let d = self.mean.len();
        let cov = &self.m2 / (self.n - 1) as f64;
        let cov = (&cov + cov.transpose()) * 0.5;
        let mut sigma = Vec::with_capacity(d * d);
        for i in 0..d {
            sigma.extend((0..d).map(|j| cov[(i, j)]));
        }
        FeatureGaussian::new(self.mean.iter().copied().collect(), sigma, self.n)
    }
}

/// Streams images through the extractor, keeping the first `n_samples`
/// rows.
pub fn feature_gaussian<E, I>(extractor: &E, images: I, n_samples: usize) -> Result<FeatureGaussian>
where
    E: FeatureExtractor + ?Sized,
    I: IntoIterator<Item = Result<Tensor<f32>>>,
{
    let d = extractor.dim();
    if n_samples <= d {
        log::warn!("{n_samples} samples for {d}-dim features: covariance will be singular");
    }
    let mut acc = MomentAccumulator::new(d);
    for batch in images {
        if acc.count() >= n_samples {
            break;
        }
        let feats = extractor.features(&batch?)?;
        let keep = (n_samples - acc.count()).min(feats.len() / d);
        acc.push_rows(&feats[..keep * d]);
    }
    if acc.count() < n_samples {
        log::warn!("stream ended after {} of {n_samples} samples", acc.count());
    }
    acc.finish()
}

/// Fréchet distance between the feature Gaussians of two image streams.
pub fn compute_fid<E, R, F>(extractor: &E, real: R, fake: F, n_samples: usize) -> Result<f64>
where
    E: FeatureExtractor + ?Sized,
    R: IntoIterator<Item = Result<Tensor<f32>>>,
    F: IntoIterator<Item = Result<Tensor<f32>>>,
{
    let a = feature_gaussian(extractor, real, n_samples)?;
    let b = feature_gaussian(extractor, fake, n_samples)?;
    frechet_distance(&a, &b)
}

/// Cached real-data statistics, tied to the extractor that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealStatsCache {
    pub extractor_digest: String,
    pub dataset_digest: String,
    #[serde(flatten)]
    pub stats: FeatureGaussian,
}

impl RealStatsCache {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Loads a cache and rejects it if it was produced by another extractor.
    pub fn load(path: &Path, extractor_digest: &str) -> Result<Self> {
        let cache: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cache.extractor_digest != extractor_digest {
            return Err(Error::InvalidArgument(format!(
                "stats cache {} was computed with extractor {}, current is {extractor_digest}",
                path.display(),
                cache.extractor_digest
            )));
        }
        Ok(cache)
    }
}
