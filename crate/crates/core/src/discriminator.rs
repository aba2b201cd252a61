//! U-Net discriminator: a residual down-sampling encoder that classifies the
//! whole image, and a mirrored up-sampling decoder, fed by skip connections
//! from the encoder, that classifies every pixel.

use unetgan_autograd::{Real, Tensor};

use crate::config::{stages_unchecked, ModelConfig};
use crate::error::{Error, Result};
use crate::generator::{check_labels, generator_multipliers, BOTTLENECK_MULT};
use crate::nn::layers::{Conv2d, Embedding, Linear};
use crate::nn::{Ctx, ParamStore};
use crate::rng::Rng;

/// Encoder output channel multipliers at resolutions `s/2, s/4, …, 4`:
/// `min(16, 2^i)` for stage `i`, with the last stage forced to the 16×
/// bottleneck.
pub fn encoder_multipliers(stages: usize) -> Vec<usize> {
    (1..=stages)
        .map(|i| {
            if i == stages {
                BOTTLENECK_MULT
            } else {
                (1usize << i).min(BOTTLENECK_MULT)
            }
        })
        .collect()
}

/// Per-image and per-pixel logits for one batch.
#[derive(Debug, Clone)]
pub struct DualScore<T: Real> {
    /// Shape `N`.
    pub enc_logit: Tensor<T>,
    /// Shape `N×1×H×W`.
    pub dec_logits: Tensor<T>,
}

impl<T: Real> DualScore<T> {
    /// Rows `start..start+len` of both heads.
    pub fn narrow(&self, start: usize, len: usize) -> DualScore<T> {
        DualScore {
            enc_logit: self.enc_logit.narrow_batch(start, len),
            dec_logits: self.dec_logits.narrow_batch(start, len),
        }
    }
}

/// Elementwise sigmoid of the decoder logits.
pub fn decoder_probability_map<T: Real>(score: &DualScore<T>) -> Tensor<T> {
    score.dec_logits.sigmoid()
}

/// Per-sample spatial mean of the decoder's sigmoid probabilities.
pub fn mean_pixel_score<T: Real>(score: &DualScore<T>) -> Vec<T> {
    decoder_probability_map(score).mean_per_sample().to_vec()
}

#[derive(Debug, Clone)]
struct DownBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Conv2d,
    preactivation: bool,
}

impl DownBlock {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        self.conv1.init(store, rng);
        self.conv2.init(store, rng);
        self.shortcut.init(store, rng);
    }

    fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Tensor<T> {
        let h = if self.preactivation { x.relu() } else { x.clone() };
        let h = self.conv1.forward(ctx, &h).relu();
        let h = self.conv2.forward(ctx, &h).avg_pool2();
        let sc = if self.preactivation {
            self.shortcut.forward(ctx, x).avg_pool2()
        } else {
            self.shortcut.forward(ctx, &x.avg_pool2())
        };
        h.add(&sc)
    }
}

/// Generator-style up block without normalization.
#[derive(Debug, Clone)]
struct DecoderBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl DecoderBlock {
    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        self.conv1.init(store, rng);
        self.conv2.init(store, rng);
        if let Some(s) = &self.shortcut {
            s.init(store, rng);
        }
    }

    fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Tensor<T>) -> Tensor<T> {
        let h = x.relu().upsample2();
        let h = self.conv1.forward(ctx, &h).relu();
        let h = self.conv2.forward(ctx, &h);
        let sc = x.upsample2();
        let sc = match &self.shortcut {
            Some(c) => c.forward(ctx, &sc),
            None => sc,
        };
        h.add(&sc)
    }
}

/// Whether decoder blocks receive the encoder features (normal operation) or
/// zeros of the same shape (skip-connection ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skips {
    Wired,
    Zeroed,
}

#[derive(Debug, Clone)]
pub struct UNetDiscriminator {
    cfg: ModelConfig,
    stages: usize,
    encoder: Vec<DownBlock>,
    enc_head: Linear,
    enc_embed: Option<Embedding>,
    decoder: Vec<DecoderBlock>,
    dec_head: Conv2d,
    dec_embed: Option<Embedding>,
}

impl UNetDiscriminator {
    /// Accepts any power-of-two `image_size >= 8`.
    pub fn new(cfg: &ModelConfig) -> Self {
        let stages = stages_unchecked(cfg.image_size);
        let sn = cfg.use_spectral_norm;
        let ch = cfg.ch;
        let enc_mult = encoder_multipliers(stages);

        let mut cin = cfg.channels;
        let encoder = enc_mult
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let cout = m * ch;
                let name = format!("d.enc.{i}");
                let b = DownBlock {
                    conv1: Conv2d::new(format!("{name}.conv1"), cin, cout, 3, sn),
                    conv2: Conv2d::new(format!("{name}.conv2"), cout, cout, 3, sn),
                    shortcut: Conv2d::new(format!("{name}.shortcut"), cin, cout, 1, sn),
                    preactivation: i > 0,
                };
                cin = cout;
                b
            })
            .collect();

        // Decoder block j outputs what the generator's block j outputs; from
        // the second block on its input also carries the encoder features at
        // the same resolution.
        let mut prev = BOTTLENECK_MULT * ch;
        let decoder = generator_multipliers(stages)
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let skip = if j == 0 { 0 } else { enc_mult[stages - 1 - j] * ch };
                let (cin, cout) = (prev + skip, m * ch);
                let name = format!("d.dec.{j}");
                prev = cout;
                DecoderBlock {
                    conv1: Conv2d::new(format!("{name}.conv1"), cin, cout, 3, sn),
                    conv2: Conv2d::new(format!("{name}.conv2"), cout, cout, 3, sn),
                    shortcut: (cin != cout).then(|| Conv2d::new(format!("{name}.shortcut"), cin, cout, 1, sn)),
                }
            })
            .collect();

        let feat = BOTTLENECK_MULT * ch;
        let cond = cfg.is_conditional();
        Self {
            cfg: cfg.clone(),
            stages,
            encoder,
            enc_head: Linear::new("d.enc_head", feat, 1, true, sn),
            enc_embed: cond.then(|| Embedding::new("d.enc_embed", cfg.num_classes, feat)),
            decoder,
            dec_head: Conv2d::new("d.dec_head", ch, 1, 1, sn),
            dec_embed: cond.then(|| Embedding::new("d.dec_embed", cfg.num_classes, ch)),
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
        for b in &self.encoder {
            b.init(&mut store, rng);
        }
        self.enc_head.init(&mut store, rng);
        if let Some(e) = &self.enc_embed {
            e.init(&mut store, rng);
        }
        for b in &self.decoder {
            b.init(&mut store, rng);
        }
        self.dec_head.init(&mut store, rng);
        if let Some(e) = &self.dec_embed {
            e.init(&mut store, rng);
        }
        store
    }

    fn check_input<T: Real>(&self, images: &Tensor<T>, labels: Option<&[usize]>) -> Result<()> {
        let (n, c, h, w) = match *images.shape() {
            [n, c, h, w] => (n, c, h, w),
            ref s => return Err(Error::Shape(format!("expected N×C×H×W images, got {s:?}"))),
        };
        let s = self.cfg.image_size;
        if (c, h, w) != (self.cfg.channels, s, s) {
            return Err(Error::Shape(format!(
                "images are {c}×{h}×{w}, discriminator expects {}×{s}×{s}",
                self.cfg.channels
            )));
        }
        match (self.cfg.is_conditional(), labels) {
            (true, Some(y)) => check_labels(y, n, self.cfg.num_classes),
            (false, None) => Ok(()),
            (true, None) => Err(Error::Shape("conditional discriminator needs labels".into())),
            (false, Some(_)) => Err(Error::Shape("unconditional discriminator got labels".into())),
        }
    }

    fn encode<T: Real>(&self, ctx: &Ctx<'_, T>, images: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut feats = Vec::with_capacity(self.stages);
        let mut h = images.clone();
        for b in &self.encoder {
            h = b.forward(ctx, &h);
            feats.push(h.clone());
        }
        feats
    }

    fn encoder_head<T: Real>(&self, ctx: &Ctx<'_, T>, bottleneck: &Tensor<T>, labels: Option<&[usize]>) -> Tensor<T> {
        let n = bottleneck.shape()[0];
        let pooled = bottleneck.relu().sum_spatial();
        let mut logit = self.enc_head.forward(ctx, &pooled).reshape(&[n]);
        if let (Some(emb), Some(y)) = (&self.enc_embed, labels) {
            logit = logit.add(&emb.forward(ctx, y).mul(&pooled).sum_per_sample());
        }
        logit
    }

    /// Both heads.
    pub fn discriminate<T: Real>(&self, ctx: &Ctx<'_, T>, images: &Tensor<T>, labels: Option<&[usize]>) -> Result<DualScore<T>> {
        self.discriminate_with(ctx, images, labels, Skips::Wired)
    }

    pub fn discriminate_with<T: Real>(
        &self,
        ctx: &Ctx<'_, T>,
        images: &Tensor<T>,
        labels: Option<&[usize]>,
        skips: Skips,
    ) -> Result<DualScore<T>> {
        self.check_input(images, labels)?;
        let feats = self.encode(ctx, images);
        let bottleneck = &feats[self.stages - 1];
        let enc_logit = self.encoder_head(ctx, bottleneck, labels);

        let mut d = bottleneck.clone();
        for (j, block) in self.decoder.iter().enumerate() {
            if j > 0 {
                let skip = &feats[self.stages - 1 - j];
                let skip = match skips {
                    Skips::Wired => skip.clone(),
                    Skips::Zeroed => Tensor::zeros(skip.shape()),
                };
                d = d.concat_channels(&skip);
            }
            d = block.forward(ctx, &d);
        }
        let h = d.relu();
        let mut dec_logits = self.dec_head.forward(ctx, &h);
        if let (Some(emb), Some(y)) = (&self.dec_embed, labels) {
            dec_logits = dec_logits.add(&h.channel_dot(&emb.forward(ctx, y)));
        }
        Ok(DualScore { enc_logit, dec_logits })
    }

    /// Only the per-image head; the decoder is not evaluated.
    pub fn encoder_logit<T: Real>(&self, ctx: &Ctx<'_, T>, images: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        self.check_input(images, labels)?;
        let feats = self.encode(ctx, images);
        Ok(self.encoder_head(ctx, &feats[self.stages - 1], labels))
    }

    /// True for parameters that belong to the decoder branch.
    pub fn is_decoder_param(name: &str) -> bool {
        name.starts_with("d.dec")
    }

    /// Stage table with resolutions and channel counts.
    pub fn describe(&self) -> String {
        let s = self.cfg.image_size;
        let mut out = format!(
            "u-net discriminator ({s} px, ch={}, classes={})\n",
            self.cfg.ch, self.cfg.num_classes
        );
        out += "  stage       resolution      channels\n";
        for (i, b) in self.encoder.iter().enumerate() {
            let r = s >> i;
            out += &format!(
                "  down {i:<6} {r}x{r} -> {}x{}  {} -> {}\n",
                r / 2,
                r / 2,
                b.conv1.cin,
                b.conv1.cout
            );
        }
        out += &format!("  enc head    relu, sum pool, linear {} -> 1\n", self.enc_head.fin);
        for (j, b) in self.decoder.iter().enumerate() {
            let r = 4 << j;
            out += &format!(
                "  up {j:<8} {r}x{r} -> {}x{}  {} -> {}\n",
                2 * r,
                2 * r,
                b.conv1.cin,
                b.conv1.cout
            );
        }
        out += &format!("  dec head    relu, conv1x1 {} -> 1\n", self.cfg.ch);
        out
    }
}
