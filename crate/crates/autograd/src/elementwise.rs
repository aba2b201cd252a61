use std::rc::Rc;

use crate::{Real, Tensor};

fn check_same(a: &Tensor<impl Real>, b: &Tensor<impl Real>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

/// Numerically stable `ln σ(x)`.
pub fn log_sigmoid<T: Real>(x: T) -> T {
    // ln σ(x) = min(x, 0) - ln(1 + e^{-|x|})
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tensor<T> {
    /// Pointwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.data_rc();
        let y = Rc::new(out.clone());
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.iter().zip(y.iter()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        check_same(self, other, "add");
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, need| {
                let gv = g.to_vec();
                vec![need[0].then(|| gv.clone()), need[1].then_some(gv)]
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        check_same(self, other, "sub");
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, need| {
                vec![
                    need[0].then(|| g.to_vec()),
                    need[1].then(|| g.iter().map(|&v| -v).collect()),
                ]
            }),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        check_same(self, other, "mul");
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.data_rc(), other.data_rc());
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.iter().zip(b.iter()).map(|(&g, &b)| g * b).collect()),
                    need[1].then(|| g.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect()),
                ]
            }),
        )
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-T::one())
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln σ(x)`, finite for any finite input.
    pub fn log_sigmoid(&self) -> Tensor<T> {
        // d/dx ln σ(x) = 1 - σ(x) = σ(-x)
        self.unary(log_sigmoid, |x, _| sigmoid(-x))
    }

    /// Divides every element by a single-element tensor.
    pub fn div_scalar_tensor(&self, s: &Tensor<T>) -> Tensor<T> {
        assert_eq!(s.numel(), 1, "divisor must have one element");
        let sv = s.item();
        let inv = T::one() / sv;
        let out: Vec<T> = self.data().iter().map(|&x| x * inv).collect();
        let x = self.data_rc();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), s.clone()],
            Box::new(move |g, need| {
                let gx = need[0].then(|| g.iter().map(|&g| g * inv).collect());
                // d(x/s)/ds = -x/s²
                let gs = need[1].then(|| {
                    let dot: T = g.iter().zip(x.iter()).map(|(&g, &x)| g * x).sum();
                    vec![-dot * inv * inv]
                });
                vec![gx, gs]
            }),
        )
    }

    /// `mask ⊙ self + (1 − mask) ⊙ other`.
    ///
    /// `mask` has shape `N×H×W` and is broadcast over the channel axis of
    /// `N×C×H×W` operands. Mask entries are expected to be 0 or 1 but any
    /// value interpolates linearly.
    pub fn masked_blend(&self, other: &Tensor<T>, mask: &[T]) -> Tensor<T> {
        check_same(self, other, "masked_blend");
        let (n, c, h, w) = self.dims4();
        let hw = h * w;
        assert_eq!(mask.len(), n * hw, "mask must be N×H×W");
        let mask = Rc::new(mask.to_vec());
        let (a, b) = (self.data(), other.data());
        let mut out = vec![T::zero(); a.len()];
        for s in 0..n {
            let m = &mask[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for p in 0..hw {
                    let i = base + p;
                    // Exact selection for binary masks keeps identities bit-exact.
                    out[i] = if m[p] == T::one() {
                        a[i]
                    } else if m[p] == T::zero() {
                        b[i]
                    } else {
                        m[p] * a[i] + (T::one() - m[p]) * b[i]
                    };
                }
            }
        }
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, need| {
                let weight = |i: usize| mask[(i / (c * hw)) * hw + i % hw];
                vec![
                    need[0].then(|| g.iter().enumerate().map(|(i, &g)| g * weight(i)).collect()),
                    need[1].then(|| {
                        g.iter()
                            .enumerate()
                            .map(|(i, &g)| g * (T::one() - weight(i)))
                            .collect()
                    }),
                ]
            }),
        )
    }
}
