use std::rc::Rc;

use crate::{Real, Tensor};

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Batch normalization without affine parameters, using statistics of
    /// this batch over the `N`, `H` and `W` axes.
    pub fn batch_norm(&self, eps: T) -> (Tensor<T>, BatchStats<T>) {
        let (n, c, h, w) = self.dims4();
        let hw = h * w;
        let count = T::from_usize(n * hw).unwrap();
        let x = self.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for smp in 0..n {
                s = s + x[(smp * c + ch) * hw..(smp * c + ch + 1) * hw].iter().copied().sum();
            }
            let m = s / count;
            let mut v = T::zero();
            for smp in 0..n {
                v = v + x[(smp * c + ch) * hw..(smp * c + ch + 1) * hw]
                    .iter()
                    .map(|&x| (x - m) * (x - m))
                    .sum();
            }
            mean[ch] = m;
            var[ch] = v / count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = vec![T::zero(); x.len()];
        for smp in 0..n {
            for ch in 0..c {
                let r = (smp * c + ch) * hw..(smp * c + ch + 1) * hw;
                out[r.clone()]
                    .iter_mut()
                    .zip(&x[r])
                    .for_each(|(o, &x)| *o = (x - mean[ch]) * inv_std[ch]);
            }
        }
        let y = Rc::new(out.clone());
        let t = Tensor::from_op(
            out,
            vec![n, c, h, w],
            vec![self.clone()],
            Box::new(move |g, _| {
                // dx = inv_std · (g − mean(g) − y·mean(g·y))
                let mut gx = vec![T::zero(); g.len()];
                for ch in 0..c {
                    let (mut sg, mut sgy) = (T::zero(), T::zero());
                    for smp in 0..n {
                        let r = (smp * c + ch) * hw..(smp * c + ch + 1) * hw;
                        for (&g, &y) in g[r.clone()].iter().zip(&y[r]) {
                            sg = sg + g;
                            sgy = sgy + g * y;
                        }
                    }
                    let (mg, mgy) = (sg / count, sgy / count);
                    for smp in 0..n {
                        let r = (smp * c + ch) * hw..(smp * c + ch + 1) * hw;
                        for ((d, &g), &y) in gx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&y[r]) {
                            *d = inv_std[ch] * (g - mg - y * mgy);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        );
        (t, BatchStats { mean, var })
    }

    /// Normalization with fixed (non-differentiable) per-channel statistics.
    pub fn normalize_with(&self, mean: &[T], var: &[T], eps: T) -> Tensor<T> {
        let (n, c, h, w) = self.dims4();
        assert_eq!(mean.len(), c);
        assert_eq!(var.len(), c);
        let hw = h * w;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = self.to_vec();
        for smp in 0..n {
            for ch in 0..c {
                out[(smp * c + ch) * hw..(smp * c + ch + 1) * hw]
                    .iter_mut()
                    .for_each(|x| *x = (*x - mean[ch]) * inv_std[ch]);
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, h, w],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = g.to_vec();
                for (i, v) in gx.iter_mut().enumerate() {
                    *v = *v * inv_std[(i / hw) % c];
                }
                vec![Some(gx)]
            }),
        )
    }

    /// `x·scale + shift` with per-sample, per-channel `scale`/`shift` of
    /// shape `N×C` broadcast over space.
    pub fn affine_nc(&self, scale: &Tensor<T>, shift: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = self.dims4();
        assert_eq!(scale.shape(), [n, c], "affine_nc: scale must be N×C");
        assert_eq!(shift.shape(), [n, c], "affine_nc: shift must be N×C");
        let hw = h * w;
        let (x, sc, sh) = (self.data(), scale.data(), shift.data());
        let mut out = vec![T::zero(); x.len()];
        for (p, (o, xs)) in out.chunks_mut(hw).zip(x.chunks(hw)).enumerate() {
            o.iter_mut().zip(xs).for_each(|(o, &x)| *o = x * sc[p] + sh[p]);
        }
        let (xr, scr) = (self.data_rc(), scale.data_rc());
        Tensor::from_op(
            out,
            vec![n, c, h, w],
            vec![self.clone(), scale.clone(), shift.clone()],
            Box::new(move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    for (p, (d, gs)) in gx.chunks_mut(hw).zip(g.chunks(hw)).enumerate() {
                        d.iter_mut().zip(gs).for_each(|(d, &g)| *d = g * scr[p]);
                    }
                    gx
                });
                let gsc = need[1].then(|| {
                    g.chunks(hw)
                        .zip(xr.chunks(hw))
                        .map(|(gs, xs)| gs.iter().zip(xs).map(|(&g, &x)| g * x).sum())
                        .collect()
                });
                let gsh = need[2].then(|| g.chunks(hw).map(|gs| gs.iter().copied().sum()).collect());
                vec![gx, gsc, gsh]
            }),
        )
    }
}
