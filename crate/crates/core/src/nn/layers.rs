use unetgan_autograd::{Real, Tensor};

use super::init::{filled, orthogonal, unit, zeros};
use super::{Ctx, ParamStore};
use crate::rng::Rng;

fn weight<T: Real>(ctx: &Ctx<'_, T>, name: &str, sn: bool) -> Tensor<T> {
    if sn {
        ctx.spectral_normalized(name)
    } else {
        ctx.param(name)
    }
}

fn init_sn_buffers<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, rows: usize, cols: usize) {
    store.insert_buffer(format!("{name}.sn_u"), unit(rng, rows));
    store.insert_buffer(format!("{name}.sn_v"), unit(rng, cols));
}

/// Stride-1 square convolution with "same" padding and bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub sn: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, sn: bool) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            k,
            sn,
        }
    }

    fn wname(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        let w = self.wname();
        store.insert_param(&w, orthogonal(rng, &[self.cout, self.cin, self.k, self.k], 1.0));
        store.insert_param(format!("{}.bias", self.name), zeros(&[self.cout]));
        if self.sn {
            init_sn_buffers(store, rng, &w, self.cout, self.cin * self.k * self.k);
        }
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Tensor<T> {
        let w = weight(ctx, &self.wname(), self.sn);
        let b = ctx.param(&format!("{}.bias", self.name));
        x.conv2d(&w, Some(&b), self.k / 2)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub fin: usize,
    pub fout: usize,
    pub bias: bool,
    pub sn: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, fin: usize, fout: usize, bias: bool, sn: bool) -> Self {
        Self {
            name: name.into(),
            fin,
            fout,
            bias,
            sn,
        }
    }

    fn wname(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        let w = self.wname();
        store.insert_param(&w, orthogonal(rng, &[self.fout, self.fin], 1.0));
        if self.bias {
            store.insert_param(format!("{}.bias", self.name), zeros(&[self.fout]));
        }
        if self.sn {
            init_sn_buffers(store, rng, &w, self.fout, self.fin);
        }
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Tensor<T> {
        let w = weight(ctx, &self.wname(), self.sn);
        let b = self.bias.then(|| ctx.param(&format!("{}.bias", self.name)));
        x.linear(&w, b.as_ref())
    }
}

/// Lookup table of learned class vectors.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub name: String,
    pub num: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, num: usize, dim: usize) -> Self {
        Self {
            name: name.into(),
            num,
            dim,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        store.insert_param(
            format!("{}.weight", self.name),
            orthogonal(rng, &[self.num, self.dim], 1.0),
        );
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, labels: &[usize]) -> Tensor<T> {
        ctx.param(&format!("{}.weight", self.name)).index_rows(labels)
    }
}

fn init_running_stats<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) {
    store.insert_buffer(format!("{name}.running_mean"), zeros(&[channels]));
    store.insert_buffer(format!("{name}.running_var"), filled(&[channels], 1.0));
}

/// Batch norm whose per-sample scale and shift are affine functions of a
/// conditioning vector: `x̂·(1 + W_g c + b_g) + (W_b c + b_b)`.
///
/// The conditioning vector is the latent `z`; conditional models add a term
/// linear in the class embedding, which is the same map as a single linear
/// layer on the concatenation `[z, embed(y)]`.
#[derive(Debug, Clone)]
pub struct ModulatedBatchNorm {
    pub name: String,
    pub channels: usize,
    gain: Linear,
    shift: Linear,
    class_gain: Option<Linear>,
    class_shift: Option<Linear>,
}

impl ModulatedBatchNorm {
    pub fn new(name: impl Into<String>, channels: usize, z_dim: usize, class_dim: Option<usize>, sn: bool) -> Self {
        let name = name.into();
        let class = |part: &str| class_dim.map(|d| Linear::new(format!("{name}.{part}"), d, channels, false, sn));
        Self {
            gain: Linear::new(format!("{name}.gain"), z_dim, channels, true, sn),
            shift: Linear::new(format!("{name}.shift"), z_dim, channels, true, sn),
            class_gain: class("class_gain"),
            class_shift: class("class_shift"),
            name,
            channels,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        self.gain.init(store, rng);
        self.shift.init(store, rng);
        for l in self.class_gain.iter().chain(&self.class_shift) {
            l.init(store, rng);
        }
        init_running_stats(store, &self.name, self.channels);
    }

    pub fn forward<T: Real>(
        &self,
        ctx: &Ctx<'_, T>,
        x: &Tensor<T>,
        z: &Tensor<T>,
        class_embed: Option<&Tensor<T>>,
    ) -> Tensor<T> {
        let xhat = ctx.batch_norm(&self.name, x);
        let mut gain = self.gain.forward(ctx, z).add_scalar(T::one());
        let mut shift = self.shift.forward(ctx, z);
        if let (Some(e), Some(cg), Some(cs)) = (class_embed, &self.class_gain, &self.class_shift) {
            gain = gain.add(&cg.forward(ctx, e));
            shift = shift.add(&cs.forward(ctx, e));
        }
        xhat.affine_nc(&gain, &shift)
    }
}

/// Batch norm with an unconditional per-channel scale and shift.
#[derive(Debug, Clone)]
pub struct AffineBatchNorm {
    pub name: String,
    pub channels: usize,
}

impl AffineBatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert_param(format!("{}.gamma", self.name), filled(&[self.channels], 1.0));
        store.insert_param(format!("{}.beta", self.name), zeros(&[self.channels]));
        init_running_stats(store, &self.name, self.channels);
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Tensor<T> {
        let n = x.shape()[0];
        let rows = vec![0; n];
        let per_sample = |p: &str| {
            ctx.param(&format!("{}.{p}", self.name))
                .reshape(&[1, self.channels])
                .index_rows(&rows)
        };
        ctx.batch_norm(&self.name, x)
            .affine_nc(&per_sample("gamma"), &per_sample("beta"))
    }
}
