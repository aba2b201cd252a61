use crate::{Real, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }
}

/// Unfolds one sample (`cin×h×w`) into a `(cin·k·k)×(ho·wo)` matrix.
fn im2col<T: Real>(x: &[T], g: Geometry, cols: &mut [T]) {
    let ncol = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oi in 0..g.ho {
                    let ii = (oi + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, d) in line.iter_mut().enumerate() {
                        let jj = (oj + kj) as isize - g.pad as isize;
                        *d = if jj < 0 || jj >= g.w as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto one sample.
fn col2im<T: Real>(cols: &[T], g: Geometry, x: &mut [T]) {
    let ncol = g.cols();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oi in 0..g.ho {
                    let ii = (oi + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] = dst[jj as usize] + src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tensor<T> {
    /// Stride-1 2-d convolution (cross-correlation) with zero padding.
    ///
    /// `self: N×Cin×H×W`, `weight: Cout×Cin×k×k`, `bias: Cout`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, pad: usize) -> Tensor<T> {
        let (n, cin, h, w) = self.dims4();
        let (cout, cin_w, k, k2) = weight.dims4();
        assert_eq!(cin, cin_w, "conv2d: input has {cin} channels, weight expects {cin_w}");
        assert_eq!(k, k2, "conv2d: only square kernels");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: kernel larger than input");
        let g = Geometry {
            cin,
            h,
            w,
            k,
            pad,
            ho: h + 2 * pad + 1 - k,
            wo: w + 2 * pad + 1 - k,
        };
        let (rows, ncol) = (g.rows(), g.cols());
        let in_per = cin * h * w;
        let out_per = cout * ncol;

        let mut out = vec![T::zero(); n * out_per];
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ncol] };
        for s in 0..n {
            let xs = &self.data()[s * in_per..(s + 1) * in_per];
            let o = &mut out[s * out_per..(s + 1) * out_per];
            if let Some(b) = bias {
                for (co, plane) in o.chunks_mut(ncol).enumerate() {
                    plane.fill(b.data()[co]);
                }
            }
            let src: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            T::gemm(cout, rows, ncol, weight.data(), false, src, false, o, true);
        }

        let (x, wt) = (self.data_rc(), weight.data_rc());
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Tensor::from_op(
            out,
            vec![n, cout, g.ho, g.wo],
            parents,
            Box::new(move |grad, need| {
                let mut gx = need[0].then(|| vec![T::zero(); n * in_per]);
                let mut gw = need[1].then(|| vec![T::zero(); cout * rows]);
                let mut cols = vec![T::zero(); rows * ncol];
                for s in 0..n {
                    let gs = &grad[s * out_per..(s + 1) * out_per];
                    if let Some(gw) = gw.as_mut() {
                        let xs = &x[s * in_per..(s + 1) * in_per];
                        let src: &[T] = if g.is_pointwise() {
                            xs
                        } else {
                            im2col(xs, g, &mut cols);
                            &cols
                        };
                        // dW += dY · colsᵀ
                        T::gemm(cout, ncol, rows, gs, false, src, true, gw, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[s * in_per..(s + 1) * in_per];
                        if g.is_pointwise() {
                            T::gemm(rows, cout, ncol, &wt, true, gs, false, dst, false);
                        } else {
                            // dcols = Wᵀ · dY, then fold back
                            T::gemm(rows, cout, ncol, &wt, true, gs, false, &mut cols, false);
                            col2im(&cols, g, dst);
                        }
                    }
                }
                let mut res = vec![gx, gw];
                if need.len() > 2 {
                    res.push(need[2].then(|| {
                        let mut gb = vec![T::zero(); cout];
                        for s in 0..n {
                            for (co, plane) in
                                grad[s * out_per..(s + 1) * out_per].chunks(ncol).enumerate()
                            {
                                gb[co] = gb[co] + plane.iter().copied().sum();
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        )
    }
}
