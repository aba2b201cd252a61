//! Parameter initializers. All draw from an explicit RNG in `f64` and are
//! cast afterwards, so an `f32` and an `f64` network built from the same seed
//! hold the same values up to rounding.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use unetgan_autograd::Real;

use super::NamedTensor;
use crate::rng::Rng;

pub fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Orthogonal matrix of shape `shape[0] × prod(shape[1..])`, reshaped back.
pub fn orthogonal<T: Real>(rng: &mut Rng, shape: &[usize], gain: f64) -> NamedTensor<T> {
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::from_row_slice(r, c, &gaussian(rng, r * c));
    let qr = a.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if tall { q } else { q.transpose() };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(T::lit(gain * q[(i, j)]));
        }
    }
    NamedTensor::new(shape, data)
}

pub fn zeros<T: Real>(shape: &[usize]) -> NamedTensor<T> {
    NamedTensor::new(shape, vec![T::zero(); shape.iter().product()])
}

pub fn filled<T: Real>(shape: &[usize], v: f64) -> NamedTensor<T> {
    NamedTensor::new(shape, vec![T::lit(v); shape.iter().product()])
}

/// Random unit vector.
pub fn unit<T: Real>(rng: &mut Rng, n: usize) -> NamedTensor<T> {
    let g = gaussian(rng, n);
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    NamedTensor::new(&[n], g.iter().map(|x| T::lit(x / norm)).collect())
}
