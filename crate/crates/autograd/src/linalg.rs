use crate::{Real, Tensor};

impl<T: Real> Tensor<T> {
    /// `self · other` for `M×K` and `K×N` matrices.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(), false, other.data(), false, &mut out, false);
        let (a, b) = (self.data_rc(), other.data_rc());
        Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g, need| {
                let ga = need[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, false, &b, true, &mut ga, false);
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, &a, true, g, false, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Affine map `x·Wᵀ + b` with `x: N×in`, `W: out×in`, `b: out`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
        let (n, fin) = self.dims2();
        let (fout, fin2) = weight.dims2();
        assert_eq!(fin, fin2, "linear: input features {fin} vs weight {fin2}");
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = bias {
            assert_eq!(b.numel(), fout, "linear: bias length");
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(b.data());
            }
        }
        T::gemm(n, fin, fout, self.data(), false, weight.data(), true, &mut out, true);
        let (x, w) = (self.data_rc(), weight.data_rc());
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Tensor::from_op(
            out,
            vec![n, fout],
            parents,
            Box::new(move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, g, false, &w, false, &mut gx, false);
                    gx
                });
                let gw = need[1].then(|| {
                    let mut gw = vec![T::zero(); fout * fin];
                    T::gemm(fout, n, fin, g, true, &x, false, &mut gw, false);
                    gw
                });
                let mut res = vec![gx, gw];
                if need.len() > 2 {
                    res.push(need[2].then(|| {
                        let mut gb = vec![T::zero(); fout];
                        for row in g.chunks(fout) {
                            gb.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                        }
                        gb
                    }));
                }
                res
            }),
        )
    }
}
