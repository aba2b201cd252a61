//! Residual up-sampling generator with latent self-modulated batch norm.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::StandardNormal;
use unetgan_autograd::{Real, Tensor};

use crate::config::{stages_unchecked, LatentDistribution, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::layers::{AffineBatchNorm, Conv2d, Embedding, Linear, ModulatedBatchNorm};
use crate::nn::{Ctx, Mode, NamedTensor, ParamStore};
use crate::rng::Rng;

/// Channel multiplier of the 4×4 bottleneck shared by both networks.
pub const BOTTLENECK_MULT: usize = 16;

/// Output channel multipliers of the `stages` generator blocks, from the
/// bottleneck outwards: `min(16, 2^(stages − j))` for block `j = 1..=stages`.
/// For 128 px this is 16, 8, 4, 2, 1; smaller images drop blocks from the
/// bottleneck side.
pub fn generator_multipliers(stages: usize) -> Vec<usize> {
    (1..=stages)
        .map(|j| (1usize << (stages - j)).min(BOTTLENECK_MULT))
        .collect()
}

/// Noise vectors and optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T> {
    /// Row-major `n × latent_dim`.
    pub z: Vec<T>,
    pub latent_dim: usize,
    pub labels: Option<Vec<usize>>,
}

impl<T: Real> LatentBatch<T> {
    pub fn len(&self) -> usize {
        self.z.len() / self.latent_dim
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z_tensor(&self) -> Tensor<T> {
        Tensor::constant(self.z.clone(), &[self.len(), self.latent_dim])
    }
}

/// Draws `n` latents from the configured distribution, plus uniformly drawn
/// labels when the model is conditional.
pub fn sample_latent<T: Real>(cfg: &ModelConfig, n: usize, rng: &mut Rng) -> LatentBatch<T> {
    let z = (0..n * cfg.latent_dim)
        .map(|_| {
            let v: f64 = match cfg.latent_distribution {
                LatentDistribution::UniformPm1 => rng.random_range(-1.0..=1.0),
                LatentDistribution::StandardNormal => rng.sample(StandardNormal),
            };
            T::lit(v)
        })
        .collect();
    let labels = cfg
        .is_conditional()
        .then(|| (0..n).map(|_| rng.random_range(0..cfg.num_classes)).collect());
    LatentBatch {
        z,
        latent_dim: cfg.latent_dim,
        labels,
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    bn1: ModulatedBatchNorm,
    conv1: Conv2d,
    bn2: ModulatedBatchNorm,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl UpBlock {
    fn new(name: &str, cin: usize, cout: usize, z_dim: usize, class_dim: Option<usize>, sn: bool) -> Self {
        Self {
            bn1: ModulatedBatchNorm::new(format!("{name}.bn1"), cin, z_dim, class_dim, sn),
            conv1: Conv2d::new(format!("{name}.conv1"), cin, cout, 3, sn),
            bn2: ModulatedBatchNorm::new(format!("{name}.bn2"), cout, z_dim, class_dim, sn),
            conv2: Conv2d::new(format!("{name}.conv2"), cout, cout, 3, sn),
            shortcut: (cin != cout).then(|| Conv2d::new(format!("{name}.shortcut"), cin, cout, 1, sn)),
        }
    }

    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        self.bn1.init(store, rng);
        self.conv1.init(store, rng);
        self.bn2.init(store, rng);
        self.conv2.init(store, rng);
        if let Some(s) = &self.shortcut {
            s.init(store, rng);
        }
    }

    fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>, z: &Tensor<T>, e: Option<&Tensor<T>>) -> Tensor<T> {
        let h = self.bn1.forward(ctx, x, z, e).relu().upsample2();
        let h = self.conv1.forward(ctx, &h);
        let h = self.bn2.forward(ctx, &h, z, e).relu();
        let h = self.conv2.forward(ctx, &h);
        let sc = x.upsample2();
        let sc = match &self.shortcut {
            Some(c) => c.forward(ctx, &sc),
            None => sc,
        };
        h.add(&sc)
    }
}

/// Maps `(z, y)` to images in `[-1, 1]`.
///
/// Layout: linear `latent → 16ch×4×4`, one residual up block per resolution
/// stage, then batch norm, ReLU, 3×3 conv to image channels and `tanh`.
/// Every normalization layer is modulated by the same `z`.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: ModelConfig,
    stages: usize,
    embed: Option<Embedding>,
    linear: Linear,
    blocks: Vec<UpBlock>,
    out_bn: AffineBatchNorm,
    out_conv: Conv2d,
}

impl Generator {
    /// Accepts any power-of-two `image_size >= 8`; validated configs start at 16.
    pub fn new(cfg: &ModelConfig) -> Self {
        let stages = stages_unchecked(cfg.image_size);
        let sn = cfg.use_spectral_norm;
        let class_dim = cfg.is_conditional().then_some(cfg.embed_dim);
        let mut cin = BOTTLENECK_MULT * cfg.ch;
        let blocks = generator_multipliers(stages)
            .into_iter()
            .enumerate()
            .map(|(j, m)| {
                let b = UpBlock::new(&format!("g.blocks.{j}"), cin, m * cfg.ch, cfg.latent_dim, class_dim, sn);
                cin = m * cfg.ch;
                b
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            stages,
            embed: cfg
                .is_conditional()
                .then(|| Embedding::new("g.class_embed", cfg.num_classes, cfg.embed_dim)),
            linear: Linear::new("g.linear", cfg.latent_dim, BOTTLENECK_MULT * cfg.ch * 16, true, sn),
            blocks,
            out_bn: AffineBatchNorm::new("g.out_bn", cfg.ch),
            out_conv: Conv2d::new("g.out_conv", cfg.ch, cfg.channels, 3, sn),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn init<T: Real>(&self, rng: &mut Rng) -> ParamStore<T> {
        let mut store = ParamStore::default();
        if let Some(e) = &self.embed {
            e.init(&mut store, rng);
        }
        self.linear.init(&mut store, rng);
        for b in &self.blocks {
            b.init(&mut store, rng);
        }
        self.out_bn.init(&mut store);
        self.out_conv.init(&mut store, rng);
        store
    }

    /// `z: N×latent_dim`; `labels` required iff the model is conditional.
    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, z: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        let (n, zd) = z.dims2();
        if zd != self.cfg.latent_dim {
            return Err(Error::Shape(format!(
                "latent has {zd} dims, generator expects {}",
                self.cfg.latent_dim
            )));
        }
        let e = match (&self.embed, labels) {
            (Some(emb), Some(y)) => {
                check_labels(y, n, self.cfg.num_classes)?;
                Some(emb.forward(ctx, y))
            }
            (None, None) => None,
            (Some(_), None) => return Err(Error::Shape("conditional generator needs labels".into())),
            (None, Some(_)) => return Err(Error::Shape("unconditional generator got labels".into())),
        };
        let mut h = self
            .linear
            .forward(ctx, z)
            .reshape(&[n, BOTTLENECK_MULT * self.cfg.ch, 4, 4]);
        for b in &self.blocks {
            h = b.forward(ctx, &h, z, e.as_ref());
        }
        let h = self.out_bn.forward(ctx, &h).relu();
        Ok(self.out_conv.forward(ctx, &h).tanh())
    }

    pub fn generate<T: Real>(&self, ctx: &Ctx<'_, T>, latents: &LatentBatch<T>) -> Result<Tensor<T>> {
        self.forward(ctx, &latents.z_tensor(), latents.labels.as_deref())
    }

    /// Re-estimates every batch-norm layer's running statistics as the mean
    /// of batch statistics over `batches` fresh latent batches, so eval-mode
    /// generation matches the current weights (e.g. EMA weights).
    pub fn standing_stats<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng, batches: usize, batch_size: usize) -> Result<()> {
        let mut acc: BTreeMap<String, (Vec<T>, Vec<T>)> = BTreeMap::new();
        for _ in 0..batches {
            let lat = sample_latent::<T>(&self.cfg, batch_size, rng);
            let ctx = Ctx::new(store, Mode::Train);
            self.generate(&ctx, &lat)?;
            for (name, st) in ctx.batch_stats() {
                let e = acc
                    .entry(name)
                    .or_insert_with(|| (vec![T::zero(); st.mean.len()], vec![T::zero(); st.var.len()]));
                e.0.iter_mut().zip(&st.mean).for_each(|(a, &b)| *a = *a + b);
                e.1.iter_mut().zip(&st.var).for_each(|(a, &b)| *a = *a + b);
            }
        }
        let k = T::from_usize(batches.max(1)).unwrap();
        for (name, (m, v)) in acc {
            let c = m.len();
            store.insert_buffer(format!("{name}.running_mean"), NamedTensor::new(&[c], m.iter().map(|&x| x / k).collect()));
            store.insert_buffer(format!("{name}.running_var"), NamedTensor::new(&[c], v.iter().map(|&x| x / k).collect()));
        }
        Ok(())
    }

    /// Stage table: `(stage, resolution in→out, channels in→out)`.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "generator ({} px, ch={}, latent={}, classes={})\n",
            self.cfg.image_size, self.cfg.ch, self.cfg.latent_dim, self.cfg.num_classes
        );
        s += &format!("  linear      latent -> {}x4x4\n", BOTTLENECK_MULT * self.cfg.ch);
        for (j, b) in self.blocks.iter().enumerate() {
            let r = 4 << j;
            s += &format!(
                "  up {j:<8} {r}x{r} -> {}x{}  {} -> {}\n",
                2 * r,
                2 * r,
                b.conv1.cin,
                b.conv1.cout
            );
        }
        s += &format!("  out         bn, relu, conv3x3 {} -> {}, tanh\n", self.cfg.ch, self.cfg.channels);
        s
    }
}

pub(crate) fn check_labels(labels: &[usize], n: usize, num_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for batch of {n}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Shape(format!("label {bad} out of range for {num_classes} classes")));
    }
    Ok(())
}
