use crate::{Real, Tensor};

impl<T: Real> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![total],
            vec![1],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel()).unwrap();
        self.sum_all().mul_scalar(T::one() / n)
    }

    /// Sums every axis except the leading one: `N×… → N`.
    pub fn sum_per_sample(&self) -> Tensor<T> {
        let n = self.shape()[0];
        let per = self.numel() / n.max(1);
        let out = self.data().chunks(per.max(1)).take(n).map(|c| c.iter().copied().sum()).collect();
        Tensor::from_op(
            out,
            vec![n],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(n * per);
                for &gi in g {
                    gx.extend(std::iter::repeat_n(gi, per));
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Averages every axis except the leading one: `N×… → N`.
    pub fn mean_per_sample(&self) -> Tensor<T> {
        let per = self.numel() / self.shape()[0].max(1);
        self.sum_per_sample().mul_scalar(T::one() / T::from_usize(per).unwrap())
    }

    /// Global sum pooling: `N×C×H×W → N×C`.
    pub fn sum_spatial(&self) -> Tensor<T> {
        let (n, c, h, w) = self.dims4();
        let hw = h * w;
        let out = self.data().chunks(hw).map(|p| p.iter().copied().sum()).collect();
        Tensor::from_op(
            out,
            vec![n, c],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(n * c * hw);
                for &gi in g {
                    gx.extend(std::iter::repeat_n(gi, hw));
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Per-location inner product over channels: `N×C×H×W · N×C → N×1×H×W`.
    pub fn channel_dot(&self, e: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = self.dims4();
        assert_eq!(e.shape(), [n, c], "channel_dot: embedding must be N×C");
        let hw = h * w;
        let (x, ev) = (self.data(), e.data());
        let mut out = vec![T::zero(); n * hw];
        for s in 0..n {
            let o = &mut out[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let k = ev[s * c + ch];
                let xs = &x[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                o.iter_mut().zip(xs).for_each(|(o, &x)| *o = *o + k * x);
            }
        }
        let (xr, er) = (self.data_rc(), e.data_rc());
        Tensor::from_op(
            out,
            vec![n, 1, h, w],
            vec![self.clone(), e.clone()],
            Box::new(move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); n * c * hw];
                    for s in 0..n {
                        let gs = &g[s * hw..(s + 1) * hw];
                        for ch in 0..c {
                            let k = er[s * c + ch];
                            gx[(s * c + ch) * hw..(s * c + ch + 1) * hw]
                                .iter_mut()
                                .zip(gs)
                                .for_each(|(d, &g)| *d = g * k);
                        }
                    }
                    gx
                });
                let ge = need[1].then(|| {
                    let mut ge = vec![T::zero(); n * c];
                    for s in 0..n {
                        let gs = &g[s * hw..(s + 1) * hw];
                        for ch in 0..c {
                            let xs = &xr[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                            ge[s * c + ch] = gs.iter().zip(xs).map(|(&g, &x)| g * x).sum();
                        }
                    }
                    ge
                });
                vec![gx, ge]
            }),
        )
    }
}
