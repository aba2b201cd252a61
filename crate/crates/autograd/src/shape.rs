use crate::{numel, Real, Tensor};

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(numel(shape), self.numel(), "reshape {:?} -> {:?}", self.shape(), shape);
        Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Concatenates two `N×C×H×W` tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Tensor<T> {
        let (n, ca, h, w) = self.dims4();
        let (nb, cb, hb, wb) = other.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels: incompatible shapes");
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for s in 0..n {
            out.extend_from_slice(&self.data()[s * sa..(s + 1) * sa]);
            out.extend_from_slice(&other.data()[s * sb..(s + 1) * sb]);
        }
        Tensor::from_op(
            out,
            vec![n, ca + cb, h, w],
            vec![self.clone(), other.clone()],
            Box::new(move |g, need| {
                let split = |off: usize, len: usize| {
                    let mut v = Vec::with_capacity(n * len);
                    for s in 0..n {
                        let base = s * (sa + sb) + off;
                        v.extend_from_slice(&g[base..base + len]);
                    }
                    v
                };
                vec![need[0].then(|| split(0, sa)), need[1].then(|| split(sa, sb))]
            }),
        )
    }

    /// Stacks tensors along the leading (batch) axis.
    pub fn cat_batch(parts: &[&Tensor<T>]) -> Tensor<T> {
        assert!(!parts.is_empty(), "cat_batch of nothing");
        let tail = &parts[0].shape()[1..];
        let mut lead = 0;
        let mut out = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            assert_eq!(&p.shape()[1..], tail, "cat_batch: trailing shapes differ");
            lead += p.shape()[0];
            lens.push(p.numel());
            out.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Tensor::from_op(
            out,
            shape,
            parts.iter().map(|p| (*p).clone()).collect(),
            Box::new(move |g, need| {
                let mut off = 0;
                lens.iter()
                    .zip(need)
                    .map(|(&len, &nd)| {
                        let r = nd.then(|| g[off..off + len].to_vec());
                        off += len;
                        r
                    })
                    .collect()
            }),
        )
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Tensor<T> {
        let lead = self.shape()[0];
        assert!(start + len <= lead, "narrow_batch out of range");
        let per = self.numel() / lead.max(1);
        let total = self.numel();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Tensor::from_op(
            self.data()[start * per..(start + len) * per].to_vec(),
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); total];
                gx[start * per..(start + len) * per].copy_from_slice(g);
                vec![Some(gx)]
            }),
        )
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&self) -> Tensor<T> {
        let (n, c, h, w) = self.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial size");
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let x = self.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let xi = &x[plane * h * w..(plane + 1) * h * w];
            let o = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for i in 0..ho {
                for j in 0..wo {
                    let r0 = 2 * i * w + 2 * j;
                    o[i * wo + j] = (xi[r0] + xi[r0 + 1] + xi[r0 + w] + xi[r0 + w + 1]) * quarter;
                }
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, ho, wo],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let gi = &g[plane * ho * wo..(plane + 1) * ho * wo];
                    let d = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for i in 0..ho {
                        for j in 0..wo {
                            let v = gi[i * wo + j] * quarter;
                            let r0 = 2 * i * w + 2 * j;
                            d[r0] = v;
                            d[r0 + 1] = v;
                            d[r0 + w] = v;
                            d[r0 + w + 1] = v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&self) -> Tensor<T> {
        let (n, c, h, w) = self.dims4();
        let (ho, wo) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let xi = &x[plane * h * w..(plane + 1) * h * w];
            let o = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for i in 0..ho {
                for j in 0..wo {
                    o[i * wo + j] = xi[(i / 2) * w + j / 2];
                }
            }
        }
        Tensor::from_op(
            out,
            vec![n, c, ho, wo],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let gi = &g[plane * ho * wo..(plane + 1) * ho * wo];
                    let d = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for i in 0..ho {
                        for j in 0..wo {
                            let k = (i / 2) * w + j / 2;
                            d[k] = d[k] + gi[i * wo + j];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Row lookup into a `K×D` table (embedding).
    pub fn index_rows(&self, idx: &[usize]) -> Tensor<T> {
        let (k, d) = self.dims2();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            assert!(i < k, "index {i} out of range for {k} rows");
            out.extend_from_slice(&self.data()[i * d..(i + 1) * d]);
        }
        let idx = idx.to_vec();
        Tensor::from_op(
            out,
            vec![idx.len(), d],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gt = vec![T::zero(); k * d];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] = gt[i * d + j] + g[r * d + j];
                    }
                }
                vec![Some(gt)]
            }),
        )
    }
}
