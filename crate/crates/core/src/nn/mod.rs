//! Named parameter storage and the per-forward-pass context that turns
//! stored values into graph leaves.

pub mod init;
pub mod layers;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};
use unetgan_autograd::{BatchStats, Gradients, Real, Tensor};

/// Shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> NamedTensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn cast<U: Real>(&self) -> NamedTensor<U> {
        NamedTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }
}

/// Trainable parameters plus non-trainable state (batch-norm running
/// statistics, spectral-norm power-iteration vectors), keyed by stable names.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub params: BTreeMap<String, NamedTensor<T>>,
    pub buffers: BTreeMap<String, NamedTensor<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn insert_param(&mut self, name: impl Into<String>, t: NamedTensor<T>) {
        let name = name.into();
        assert!(!self.params.contains_key(&name), "duplicate parameter {name}");
        self.params.insert(name, t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: NamedTensor<T>) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> &NamedTensor<T> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut NamedTensor<T> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn buffer(&self, name: &str) -> &NamedTensor<T> {
        self.buffers
            .get(name)
            .unwrap_or_else(|| panic!("missing buffer {name}"))
    }

    /// Total number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.values().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn apply_updates(&mut self, updates: BufferUpdates<T>) {
        for (name, data) in updates.0 {
            let buf = self
                .buffers
                .get_mut(&name)
                .unwrap_or_else(|| panic!("update for unknown buffer {name}"));
            assert_eq!(buf.data.len(), data.len());
            buf.data = data;
        }
    }

    /// SHA-256 over names, shapes and values of the parameters (buffers
    /// excluded).
    pub fn params_digest(&self) -> String {
        digest_map(&self.params)
    }

    pub fn buffers_digest(&self) -> String {
        digest_map(&self.buffers)
    }
}

fn digest_map<T: Real>(map: &BTreeMap<String, NamedTensor<T>>) -> String {
    let mut h = Sha256::new();
    for (name, t) in map {
        h.update(name.as_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &t.data {
            h.update(v.to_f64().unwrap().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// New buffer values produced by a forward pass.
#[derive(Debug, Default)]
pub struct BufferUpdates<T>(pub BTreeMap<String, Vec<T>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Stored running statistics in normalization layers.
    Eval,
}

const BN_MOMENTUM: f64 = 0.1;
pub(crate) const BN_EPS: f64 = 1e-5;
const SN_EPS: f64 = 1e-12;

/// State for one forward (and optional backward) pass over a [`ParamStore`].
pub struct Ctx<'a, T: Real> {
    store: &'a ParamStore<T>,
    mode: Mode,
    trainable: bool,
    update_buffers: bool,
    leaves: RefCell<BTreeMap<String, Tensor<T>>>,
    cache: RefCell<HashMap<String, Tensor<T>>>,
    updates: RefCell<BTreeMap<String, Vec<T>>>,
    stats: RefCell<BTreeMap<String, BatchStats<T>>>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            store,
            mode,
            trainable: false,
            update_buffers: false,
            leaves: RefCell::default(),
            cache: RefCell::default(),
            updates: RefCell::default(),
            stats: RefCell::default(),
        }
    }

    /// Parameters become differentiable leaves.
    pub fn trainable(mut self, on: bool) -> Self {
        self.trainable = on;
        self
    }

    /// Running statistics and power-iteration vectors are advanced.
    pub fn updating_buffers(mut self, on: bool) -> Self {
        self.update_buffers = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Leaf tensor for a stored parameter; created once per context.
    pub fn param(&self, name: &str) -> Tensor<T> {
        if let Some(t) = self.leaves.borrow().get(name) {
            return t.clone();
        }
        let p = self.store.param(name);
        let t = if self.trainable {
            Tensor::variable(p.data.clone(), &p.shape)
        } else {
            Tensor::constant(p.data.clone(), &p.shape)
        };
        self.leaves.borrow_mut().insert(name.to_string(), t.clone());
        t
    }

    /// Current value of a buffer, including updates made in this pass.
    pub fn buffer(&self, name: &str) -> Vec<T> {
        if let Some(v) = self.updates.borrow().get(name) {
            return v.clone();
        }
        self.store.buffer(name).data.clone()
    }

    fn record_update(&self, name: &str, data: Vec<T>) {
        if self.update_buffers {
            self.updates.borrow_mut().insert(name.to_string(), data);
        }
    }

    /// Weight `name` divided by its spectral-norm estimate `uᵀ W v`.
    ///
    /// With buffer updates enabled one power iteration refreshes `u` and `v`
    /// first; otherwise the stored vectors are used as-is, so the map from
    /// weights to output is a fixed differentiable function.
    pub fn spectral_normalized(&self, name: &str) -> Tensor<T> {
        if let Some(t) = self.cache.borrow().get(name) {
            return t.clone();
        }
        let w = self.param(name);
        let rows = w.shape()[0];
        let cols = w.numel() / rows;
        let (u_key, v_key) = (format!("{name}.sn_u"), format!("{name}.sn_v"));
        let (mut u, mut v) = (self.buffer(&u_key), self.buffer(&v_key));
        if self.update_buffers {
            (u, v) = power_iteration(w.data(), rows, cols, &u);
            self.record_update(&u_key, u.clone());
            self.record_update(&v_key, v.clone());
        }
        let wm = w.reshape(&[rows, cols]);
        let wv = wm.matmul(&Tensor::constant(v, &[cols, 1]));
        let sigma = wv.mul(&Tensor::constant(u, &[rows, 1])).sum_all();
        let out = w.div_scalar_tensor(&sigma);
        self.cache.borrow_mut().insert(name.to_string(), out.clone());
        out
    }

    /// Affine-free batch normalization under layer `name`.
    pub fn batch_norm(&self, name: &str, x: &Tensor<T>) -> Tensor<T> {
        let eps = T::lit(BN_EPS);
        let (mean_key, var_key) = (format!("{name}.running_mean"), format!("{name}.running_var"));
        match self.mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm(eps);
                if self.update_buffers {
                    let m = T::lit(BN_MOMENTUM);
                    let (n, _, h, w) = x.dims4();
                    let count = (n * h * w) as f64;
                    let unbias = T::lit(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
                    let blend = |old: Vec<T>, new: &[T], scale: T| -> Vec<T> {
                        old.iter()
                            .zip(new)
                            .map(|(&o, &n)| (T::one() - m) * o + m * n * scale)
                            .collect()
                    };
                    let rm = blend(self.buffer(&mean_key), &stats.mean, T::one());
                    let rv = blend(self.buffer(&var_key), &stats.var, unbias);
                    self.record_update(&mean_key, rm);
                    self.record_update(&var_key, rv);
                }
                self.stats.borrow_mut().insert(name.to_string(), stats);
                y
            }
            Mode::Eval => x.normalize_with(&self.buffer(&mean_key), &self.buffer(&var_key), eps),
        }
    }

    /// Gradients for every parameter touched in this pass, by name.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Vec<T>> {
        self.leaves
            .borrow()
            .iter()
            .map(|(k, t)| (k.clone(), grads.get_or_zeros(t)))
            .collect()
    }

    /// Batch statistics observed by train-mode normalization layers.
    pub fn batch_stats(&self) -> BTreeMap<String, BatchStats<T>> {
        self.stats.borrow().clone()
    }

    pub fn into_updates(self) -> BufferUpdates<T> {
        BufferUpdates(self.updates.into_inner())
    }
}

fn normalize<T: Real>(v: &mut [T]) {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    let d = n.max(T::lit(SN_EPS));
    v.iter_mut().for_each(|x| *x = *x / d);
}

/// One power-iteration step on the `rows×cols` matrix `w`.
pub(crate) fn power_iteration<T: Real>(w: &[T], rows: usize, cols: usize, u: &[T]) -> (Vec<T>, Vec<T>) {
    let mut v = vec![T::zero(); cols];
    T::gemm(1, rows, cols, u, false, w, false, &mut v, false);
    normalize(&mut v);
    let mut u2 = vec![T::zero(); rows];
    T::gemm(rows, cols, 1, w, false, &v, false, &mut u2, false);
    normalize(&mut u2);
    (u2, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_finds_top_singular_value() {
        // diag(3, 1) rotated: singular values 3 and 1.
        let (c, s) = (0.6f64, 0.8f64);
        let w = [3.0 * c, -s, 3.0 * s, c];
        let mut u = vec![1.0, 0.0];
        let mut v = vec![0.0; 2];
        for _ in 0..50 {
            (u, v) = power_iteration(&w, 2, 2, &u);
        }
        let mut wv = [0.0; 2];
        f64::gemm(2, 2, 1, &w, false, &v, false, &mut wv, false);
        let sigma = u[0] * wv[0] + u[1] * wv[1];
        assert!((sigma - 3.0).abs() < 1e-10);
    }

    #[test]
    fn leaves_are_shared_within_a_pass() {
        let mut store = ParamStore::<f64>::default();
        store.insert_param("w", NamedTensor::new(&[2], vec![1.0, 2.0]));
        let ctx = Ctx::new(&store, Mode::Train).trainable(true);
        let a = ctx.param("w");
        let loss = a.mul(&ctx.param("w")).sum_all();
        let grads = ctx.param_grads(&loss.backward());
        assert_eq!(grads["w"], vec![2.0, 4.0]);
    }
}
