//! Alternating discriminator/generator optimization with CutMix
//! consistency steps, generator weight averaging, periodic evaluation and
//! checkpointing.

pub mod checkpoint;
pub mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use sha2::{Digest, Sha256};
use unetgan_autograd::Tensor;

use crate::config::Config;
use crate::cutmix::{build_cutmix_batch, pmix_schedule, CutMixBatch};
use crate::data::{batch_for_iteration, Batch, Dataset};
use crate::discriminator::UNetDiscriminator;
use crate::error::{Error, Result};
use crate::evaluation::visualize::render_decoder_heatmaps;
use crate::evaluation::{
    frechet_distance, inception_style_score, FeatureExtractor, FeatureGaussian, MomentAccumulator,
    RandomConvExtractor,
};
use crate::generator::{sample_latent, Generator, LatentBatch};
use crate::losses::{
    combine_discriminator_terms, consistency_loss, cutmix_encoder_loss, cutmix_supervision_loss, dec_d_loss,
    enc_d_loss, g_loss, DiscriminatorLossBreakdown, DiscriminatorTerms, GeneratorLossBreakdown,
};
use crate::metrics::{append_records, MetricsRecord};
use crate::nn::{Ctx, Mode, ParamStore};
use crate::rng::{stream, Rng};
pub use optim::{ema_update, Adam};

/// Metrics records kept inside checkpoints.
pub const METRICS_TAIL: usize = 64;

// Independent rng streams derived from the training seed.
const STREAM_G_INIT: u64 = 0;
const STREAM_D_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
// Derived from the evaluation seed.
const STREAM_STANDING: u64 = 1;
const STREAM_EVAL_LATENTS: u64 = 2;
const STREAM_HEATMAP: u64 = 3;

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: Config,
    pub iteration: u64,
    pub g: ParamStore<f32>,
    pub d: ParamStore<f32>,
    /// Running average of the generator weights; never differentiated.
    pub ema: ParamStore<f32>,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub rng: Rng,
    pub metrics_tail: Vec<MetricsRecord>,
}

impl TrainState {
    /// Shape agreement between generator, EMA and optimizer state, and step
    /// counts that match the iteration.
    pub fn check_consistency(&self) -> Result<()> {
        let shapes = |s: &ParamStore<f32>| s.params.iter().map(|(k, t)| (k.clone(), t.shape.clone())).collect::<Vec<_>>();
        if shapes(&self.g) != shapes(&self.ema) {
            return Err(Error::Shape("EMA parameters do not mirror the generator".into()));
        }
        for (opt, store, what) in [(&self.g_opt, &self.g, "generator"), (&self.d_opt, &self.d, "discriminator")] {
            for (k, t) in &store.params {
                let ok = |m: &std::collections::BTreeMap<String, Vec<f32>>| m.get(k).is_some_and(|v| v.len() == t.data.len());
                if !ok(&opt.m) || !ok(&opt.v) {
                    return Err(Error::Shape(format!("{what} optimizer state missing or misshapen for {k}")));
                }
            }
        }
        let d_steps = self.config.train.d_steps as u64;
        if self.g_opt.step != self.iteration || self.d_opt.step != self.iteration * d_steps {
            return Err(Error::InvalidArgument(format!(
                "optimizer steps (g {}, d {}) disagree with iteration {}",
                self.g_opt.step, self.d_opt.step, self.iteration
            )));
        }
        Ok(())
    }

    /// SHA-256 over all weights, buffers, optimizer moments, counters and
    /// the rng position. Two states with equal digests continue identically.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in [&self.g, &self.d, &self.ema] {
            h.update(s.params_digest());
            h.update(s.buffers_digest());
        }
        for opt in [&self.g_opt, &self.d_opt] {
            h.update(opt.step.to_le_bytes());
            for (k, v) in opt.m.iter().chain(&opt.v) {
                h.update(k.as_bytes());
                v.iter().for_each(|x| h.update(x.to_le_bytes()));
            }
        }
        h.update(self.iteration.to_le_bytes());
        h.update(serde_json::to_vec(&crate::rng::RngSnapshot::capture(&self.rng)).unwrap_or_default());
        hex::encode(h.finalize())
    }
}

/// Loss values of one training iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub d: DiscriminatorLossBreakdown,
    pub g: GeneratorLossBreakdown,
    /// Whether the (last) discriminator step used a CutMix batch.
    pub cutmix: bool,
}

/// Proxy metrics of the averaged generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub fid: f64,
    pub is: f64,
}

/// Output locations of a run: `checkpoints/`, `metrics.ndjson`, `samples/`.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn create(root: &Path) -> Result<Self> {
        let layout = Self { root: root.to_path_buf() };
        std::fs::create_dir_all(layout.checkpoints())?;
        std::fs::create_dir_all(layout.samples())?;
        Ok(layout)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.ndjson")
    }

    pub fn checkpoint(&self, iteration: u64) -> PathBuf {
        self.checkpoints().join(format!("iter_{iteration:06}.ckpt"))
    }

    pub fn latest(&self) -> PathBuf {
        self.checkpoints().join("latest.ckpt")
    }
}

/// Result of [`Trainer::run`].
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    /// `(iteration, proxy-FID, IS-proxy)` of every evaluation.
    pub evaluations: Vec<(u64, f64, f64)>,
    pub final_checkpoint: Option<PathBuf>,
    pub wall_time: f64,
}

/// Networks, data and metric backbone for one configuration.
pub struct Trainer<'a> {
    cfg: Config,
    generator: Generator,
    disc: UNetDiscriminator,
    data: &'a Dataset,
    extractor: RandomConvExtractor,
    real_stats: Option<FeatureGaussian>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: Config, data: &'a Dataset) -> Result<Self> {
        let cfg = cfg.validate()?;
        let m = &cfg.model;
        if data.image_size() != m.image_size || data.channels() != m.channels {
            return Err(Error::Data(format!(
                "dataset is {}x{}x{}, model expects {}x{}x{}",
                data.channels(),
                data.image_size(),
                data.image_size(),
                m.channels,
                m.image_size,
                m.image_size
            )));
        }
        if data.num_classes() != m.num_classes {
            return Err(Error::Data(format!(
                "dataset has {} classes, model expects {}",
                data.num_classes(),
                m.num_classes
            )));
        }
        if data.len() < cfg.train.batch_size {
            return Err(Error::Data("dataset smaller than one batch".into()));
        }
        Ok(Self {
            generator: Generator::new(m),
            disc: UNetDiscriminator::new(m),
            extractor: RandomConvExtractor::standard(m.channels),
            cfg,
            data,
            real_stats: None,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> &UNetDiscriminator {
        &self.disc
    }

    pub fn extractor(&self) -> &RandomConvExtractor {
        &self.extractor
    }

    /// Fresh weights, zero optimizer moments, EMA equal to the generator.
    pub fn init_state(&self) -> TrainState {
        let seed = self.cfg.train.seed;
        let g = self.generator.init::<f32>(&mut stream(seed, STREAM_G_INIT));
        let d = self.disc.init::<f32>(&mut stream(seed, STREAM_D_INIT));
        let t = &self.cfg.train;
        TrainState {
            config: self.cfg.clone(),
            iteration: 0,
            g_opt: Adam::new(&g, t.lr_g, t.adam_beta1, t.adam_beta2, t.adam_eps),
            d_opt: Adam::new(&d, t.lr_d, t.adam_beta1, t.adam_beta2, t.adam_eps),
            ema: g.clone(),
            g,
            d,
            rng: stream(seed, STREAM_TRAIN),
            metrics_tail: Vec::new(),
        }
    }

    /// Fractional epoch reached after `iteration` iterations.
    pub fn epoch(&self, iteration: u64) -> f64 {
        iteration as f64 * self.cfg.train.batch_size as f64 / self.data.len() as f64
    }

    /// Probability of a CutMix step at `iteration`.
    pub fn pmix(&self, iteration: u64) -> f64 {
        let t = &self.cfg.train;
        pmix_schedule(self.epoch(iteration), t.pmix_warmup_epochs, t.pmix_max)
    }

    fn non_finite(&self, st: &TrainState, detail: String) -> Error {
        Error::NonFinite {
            iteration: st.iteration as usize,
            detail,
        }
    }

    /// Builds the CutMix batch the discriminator step would use for these
    /// sources. Exposed for diagnostics.
    pub fn cutmix_batch(&self, real: &Tensor<f32>, fake: &Tensor<f32>, labels: Option<&[usize]>, rng: &mut Rng) -> Result<CutMixBatch<f32>> {
        build_cutmix_batch(real, fake, labels, labels, rng)
    }

    /// One discriminator update on `real` against detached fakes.
    fn d_step(&self, st: &mut TrainState, real: &Tensor<f32>, labels: Option<&[usize]>) -> Result<(DiscriminatorLossBreakdown, bool)> {
        let n = real.shape()[0];
        let (mcfg, lcfg) = (&self.cfg.model, &self.cfg.loss);
        let variant = lcfg.adversarial_variant;
        let mut latents = sample_latent::<f32>(mcfg, n, &mut st.rng);
        // Fakes take the real batch's classes so CutMix pairs share a label.
        latents.labels = labels.map(<[usize]>::to_vec);
        let fake = self.generator.generate(&Ctx::new(&st.g, Mode::Train), &latents)?;

        let u: f64 = st.rng.random();
        let mixing = lcfg.use_cutmix && u < self.pmix(st.iteration);
        let cm = if mixing {
            Some(build_cutmix_batch(real, &fake, labels, labels, &mut st.rng)?)
        } else {
            None
        };
        let mut parts = vec![real, &fake];
        if let Some(c) = &cm {
            parts.push(&c.images);
        }
        let input = Tensor::cat_batch(&parts);
        let all_labels = labels.map(|l| l.repeat(parts.len()));

        let ctx = Ctx::new(&st.d, Mode::Train).trainable(true).updating_buffers(true);
        let terms = if lcfg.use_decoder_head {
            let s = self.disc.discriminate(&ctx, &input, all_labels.as_deref())?;
            let (sr, sf) = (s.narrow(0, n), s.narrow(n, n));
            let mut cutmix = None;
            let mut consistency = None;
            if let Some(c) = &cm {
                let sm = s.narrow(2 * n, n);
                let (ce, cd) = cutmix_supervision_loss(&sm.enc_logit, &sm.dec_logits, &c.masks, variant)?;
                cutmix = Some((ce, Some(cd)));
                if lcfg.use_consistency {
                    consistency = Some(consistency_loss(&sm.dec_logits, &sr.dec_logits, &sf.dec_logits, &c.masks)?);
                }
            }
            DiscriminatorTerms {
                enc: enc_d_loss(&sr.enc_logit, &sf.enc_logit, variant),
                dec: Some(dec_d_loss(&sr.dec_logits, &sf.dec_logits, variant)),
                cutmix,
                consistency,
                lambda: lcfg.lambda_consistency,
            }
        } else {
            let e = self.disc.encoder_logit(&ctx, &input, all_labels.as_deref())?;
            DiscriminatorTerms {
                enc: enc_d_loss(&e.narrow_batch(0, n), &e.narrow_batch(n, n), variant),
                dec: None,
                cutmix: cm
                    .as_ref()
                    .map(|_| (cutmix_encoder_loss(&e.narrow_batch(2 * n, n), variant), None)),
                consistency: None,
                lambda: lcfg.lambda_consistency,
            }
        };
        let obj = combine_discriminator_terms(terms);
        if !obj.breakdown.is_finite() {
            return Err(self.non_finite(st, format!("discriminator loss {:?}", obj.breakdown)));
        }
        let grads = obj.total.backward();
        let pg = ctx.param_grads(&grads);
        let updates = ctx.into_updates();
        st.d_opt.update(&mut st.d, &pg)?;
        st.d.apply_updates(updates);
        Ok((obj.breakdown, mixing))
    }

    /// One generator update on fresh latents.
    fn g_step(&self, st: &mut TrainState, n: usize) -> Result<GeneratorLossBreakdown> {
        let variant = self.cfg.loss.adversarial_variant;
        let latents = sample_latent::<f32>(&self.cfg.model, n, &mut st.rng);
        let gctx = Ctx::new(&st.g, Mode::Train).trainable(true).updating_buffers(true);
        let fake = self.generator.generate(&gctx, &latents)?;
        let dctx = Ctx::new(&st.d, Mode::Train);
        let labels = latents.labels.as_deref();
        let (loss, breakdown) = if self.cfg.loss.use_decoder_head {
            let s = self.disc.discriminate(&dctx, &fake, labels)?;
            g_loss(&s.enc_logit, Some(&s.dec_logits), variant)
        } else {
            g_loss(&self.disc.encoder_logit(&dctx, &fake, labels)?, None, variant)
        };
        if !breakdown.total.is_finite() {
            return Err(self.non_finite(st, format!("generator loss {breakdown:?}")));
        }
        let grads = loss.backward();
        let pg = gctx.param_grads(&grads);
        let updates = gctx.into_updates();
        drop(dctx);
        st.g_opt.update(&mut st.g, &pg)?;
        st.g.apply_updates(updates);
        Ok(breakdown)
    }

    /// `d_steps` discriminator updates, one generator update, then the
    /// weight-average update. Advances the iteration counter.
    pub fn train_step(&self, st: &mut TrainState, batch: &Batch) -> Result<StepReport> {
        let real = self.data.tensor::<f32>(&batch.indices);
        let labels = batch.labels.as_deref();
        let mut last = None;
        for _ in 0..self.cfg.train.d_steps {
            last = Some(self.d_step(st, &real, labels)?);
        }
        let (d, cutmix) = last.expect("d_steps >= 1");
        let g = self.g_step(st, batch.indices.len())?;
        ema_update(&mut st.ema, &st.g, self.cfg.train.ema_decay)?;
        st.ema.buffers = st.g.buffers.clone();
        st.iteration += 1;
        Ok(StepReport { d, g, cutmix })
    }

    /// Features of the first `fid_samples` dataset images (index order).
    pub fn real_stats(&mut self) -> Result<FeatureGaussian> {
        if let Some(s) = &self.real_stats {
            return Ok(s.clone());
        }
        let e = &self.cfg.eval;
        let n = e.fid_samples.min(self.data.len());
        let idx: Vec<usize> = (0..n).collect();
        let mut acc = MomentAccumulator::new(self.extractor.dim());
        for chunk in idx.chunks(e.batch_size) {
            acc.push_rows(&self.extractor.features(&self.data.tensor(chunk))?);
        }
        let stats = acc.finish()?;
        self.real_stats = Some(stats.clone());
        Ok(stats)
    }

    /// Uses precomputed real statistics (e.g. from a cache file).
    pub fn set_real_stats(&mut self, stats: FeatureGaussian) {
        self.real_stats = Some(stats);
    }

    /// EMA weights with batch-norm statistics re-estimated for them, ready
    /// for eval-mode sampling.
    pub fn eval_generator_store(&self, ema: &ParamStore<f32>) -> Result<ParamStore<f32>> {
        let e = &self.cfg.eval;
        let mut store = ema.clone();
        let mut rng = stream(e.seed, STREAM_STANDING);
        self.generator.standing_stats(&mut store, &mut rng, e.standing_stats_batches, e.batch_size)?;
        Ok(store)
    }

    /// Generates `n` eval-mode samples from `store` in batches, from the
    /// fixed evaluation latent stream, with the labels used.
    pub fn sample_batches(&self, store: &ParamStore<f32>, n: usize) -> Result<Vec<(Tensor<f32>, Option<Vec<usize>>)>> {
        let e = &self.cfg.eval;
        let mut rng = stream(e.seed, STREAM_EVAL_LATENTS);
        let ctx = Ctx::new(store, Mode::Eval);
        let mut out = Vec::new();
        let mut left = n;
        while left > 0 {
            let b = left.min(e.batch_size);
            let latents = sample_latent(&self.cfg.model, b, &mut rng);
            out.push((self.generator.generate(&ctx, &latents)?, latents.labels));
            left -= b;
        }
        Ok(out)
    }

    /// Proxy-FID and IS-proxy of the averaged generator.
    pub fn evaluate(&mut self, st: &TrainState) -> Result<EvalReport> {
        let real = self.real_stats()?;
        let store = self.eval_generator_store(&st.ema)?;
        let mut acc = MomentAccumulator::new(self.extractor.dim());
        let mut probs = Vec::new();
        for (batch, _) in self.sample_batches(&store, self.cfg.eval.fid_samples)? {
            acc.push_rows(&self.extractor.features(&batch)?);
            probs.extend(self.extractor.class_probs(&batch)?);
        }
        let fid = frechet_distance(&real, &acc.finish()?)?;
        let is = inception_style_score(&probs, self.extractor.num_classes())?;
        Ok(EvalReport { fid, is })
    }

    /// Fixed latents for heatmap grids.
    pub fn heatmap_latents(&self) -> LatentBatch<f32> {
        let mut rng = stream(self.cfg.eval.seed, STREAM_HEATMAP);
        sample_latent(&self.cfg.model, self.cfg.eval.heatmap_samples, &mut rng)
    }

    /// Heatmap grid of the averaged generator's samples under the current
    /// discriminator.
    pub fn render_heatmaps(&self, st: &TrainState, path: &Path) -> Result<Vec<f64>> {
        let store = self.eval_generator_store(&st.ema)?;
        render_decoder_heatmaps(&self.generator, &store, &self.disc, &st.d, &self.heatmap_latents(), path)
    }

    fn record(&self, st: &mut TrainState, layout: Option<&RunLayout>, rec: MetricsRecord) -> Result<()> {
        if let Some(l) = layout {
            append_records(&l.metrics(), std::slice::from_ref(&rec))?;
        }
        st.metrics_tail.push(rec);
        if st.metrics_tail.len() > METRICS_TAIL {
            let excess = st.metrics_tail.len() - METRICS_TAIL;
            st.metrics_tail.drain(..excess);
        }
        Ok(())
    }

    fn eval_and_record(&mut self, st: &mut TrainState, layout: Option<&RunLayout>, start: &Instant, summary: &mut RunSummary) -> Result<()> {
        let rep = self.evaluate(st)?;
        log::info!("iteration {}: proxy-FID {:.4}, IS-proxy {:.4}", st.iteration, rep.fid, rep.is);
        summary.evaluations.push((st.iteration, rep.fid, rep.is));
        let mut rec = MetricsRecord::at(st.iteration, self.epoch(st.iteration), start.elapsed().as_secs_f64());
        rec.fid = Some(rep.fid);
        rec.is = Some(rep.is);
        self.record(st, layout, rec)?;
        if let Some(l) = layout {
            self.render_heatmaps(st, &l.samples().join(format!("heatmap_{:06}.png", st.iteration)))?;
        }
        Ok(())
    }

    fn save_checkpoint(&self, st: &TrainState, layout: &RunLayout) -> Result<PathBuf> {
        let path = layout.checkpoint(st.iteration);
        let bytes = checkpoint::to_bytes(st)?;
        std::fs::write(&path, &bytes)?;
        std::fs::write(layout.latest(), &bytes)?;
        Ok(path)
    }

    /// Trains until `total_iterations`, evaluating the averaged generator at
    /// the start (fresh runs only), every `eval_every` iterations and at the
    /// end, and checkpointing every `checkpoint_every` iterations and at the
    /// end. Without a layout nothing is written to disk.
    pub fn run(&mut self, st: &mut TrainState, layout: Option<&RunLayout>) -> Result<RunSummary> {
        let start = Instant::now();
        let t = self.cfg.train.clone();
        let total = t.total_iterations as u64;
        let mut summary = RunSummary::default();
        if st.iteration == 0 {
            self.eval_and_record(st, layout, &start, &mut summary)?;
        }
        while st.iteration < total {
            let batch = batch_for_iteration(self.data, t.batch_size, t.seed, st.iteration)?;
            let rep = match self.train_step(st, &batch) {
                Ok(r) => r,
                Err(e @ Error::NonFinite { .. }) => {
                    if let Some(l) = layout {
                        let path = l.checkpoints().join("nonfinite.ckpt");
                        checkpoint::save(st, &path)?;
                        log::error!("state before the failing step saved to {}", path.display());
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let it = st.iteration;
            if it.is_multiple_of(t.log_every as u64) || it == total {
                let mut rec = MetricsRecord::at(it, self.epoch(it), start.elapsed().as_secs_f64());
                rec.d_loss = Some(rep.d);
                rec.g_loss = Some(rep.g);
                rec.cutmix = Some(rep.cutmix);
                log::debug!("iteration {it}: D {:.4} G {:.4}", rep.d.total, rep.g.total);
                self.record(st, layout, rec)?;
            }
            if it.is_multiple_of(t.eval_every as u64) || it == total {
                self.eval_and_record(st, layout, &start, &mut summary)?;
            }
            if let Some(l) = layout {
                if it.is_multiple_of(t.checkpoint_every as u64) && it != total {
                    self.save_checkpoint(st, l)?;
                }
            }
        }
        if let Some(l) = layout {
            summary.final_checkpoint = Some(self.save_checkpoint(st, l)?);
        }
        summary.wall_time = start.elapsed().as_secs_f64();
        Ok(summary)
    }
}
