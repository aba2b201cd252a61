use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use unetgan_core::autograd::Tensor;
use unetgan_core::cutmix::{mix, mix_maps, sample_mask};
use unetgan_core::data::{dataset_from_config, synth_shapes_dataset};
use unetgan_core::evaluation::visualize::{
    enc_dec_scores, plot_fid_curve, plot_loss_curves, render_cutmix_panel, render_enc_dec_scatter, to_u8_signed,
};
use unetgan_core::evaluation::{FeatureExtractor, RealStatsCache};
use unetgan_core::metrics::{read_records, MetricsRecord};
use unetgan_core::nn::{Ctx, Mode};
use unetgan_core::rng::stream;
use unetgan_core::trainer::{checkpoint, RunLayout, TrainState, Trainer};

use crate::{resolve_config, EvalArgs, MakeSynthArgs, TrainArgs, UsageError, VisualizeArgs};

/// Samples in the encoder/decoder score scatter.
pub const SCATTER_SAMPLES: usize = 50;
const STREAM_PANEL_MASKS: u64 = 4;

/// File names written by `visualize`.
pub const HEATMAPS_FILE: &str = "heatmaps.png";
pub const CUTMIX_PANEL_FILE: &str = "cutmix_panel.png";
pub const SCATTER_FILE: &str = "enc_dec_scatter.svg";
pub const SCATTER_CSV_FILE: &str = "enc_dec_scatter.csv";
pub const FID_CURVE_FILE: &str = "fid_curve.svg";
pub const LOSS_CURVES_FILE: &str = "loss_curves.svg";

pub fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let resumed = match &a.resume {
        Some(path) => {
            if a.config.config.is_some() || !a.config.overrides.is_empty() {
                bail!(UsageError("--config and --set cannot be combined with --resume".into()));
            }
            Some(checkpoint::load(path)?)
        }
        None => None,
    };
    let cfg = match &resumed {
        Some(st) => st.config.clone(),
        None => resolve_config(&a.config)?,
    };
    let data = dataset_from_config(&cfg)?;
    let layout = RunLayout::create(&a.out)?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml_string())?;
    let mut trainer = Trainer::new(cfg, &data)?;
    let mut state = resumed.unwrap_or_else(|| trainer.init_state());
    let summary = trainer.run(&mut state, Some(&layout))?;
    let last = summary.evaluations.last();
    println!(
        "{}",
        serde_json::json!({
            "iteration": state.iteration,
            "fid": last.map(|e| e.1),
            "is": last.map(|e| e.2),
            "checkpoint": summary.final_checkpoint,
            "wall_time": summary.wall_time,
        })
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<TrainState> {
    checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let state = load_checkpoint(&a.checkpoint)?;
    let mut cfg = state.config.clone();
    if let Some(n) = a.samples {
        cfg.eval.fid_samples = n;
    }
    let data = dataset_from_config(&cfg)?;
    let mut trainer = Trainer::new(cfg, &data)?;
    if let Some(path) = &a.stats_cache {
        let digest = trainer.extractor().digest();
        if path.exists() {
            let cache = RealStatsCache::load(path, &digest)?;
            if cache.dataset_digest != data.digest() {
                log::warn!("stats cache {} was computed on different data", path.display());
            }
            trainer.set_real_stats(cache.stats);
        } else {
            let cache = RealStatsCache {
                extractor_digest: digest,
                dataset_digest: data.digest(),
                stats: trainer.real_stats()?,
            };
            cache.save(path)?;
        }
    }
    let report = trainer.evaluate(&state)?;
    let mut rec = MetricsRecord::at(state.iteration, trainer.epoch(state.iteration), start.elapsed().as_secs_f64());
    rec.fid = Some(report.fid);
    rec.is = Some(report.is);
    println!("{}", rec.to_line());
    Ok(())
}

fn metrics_for(a: &VisualizeArgs, state: &TrainState) -> anyhow::Result<Vec<MetricsRecord>> {
    let beside = a
        .checkpoint
        .parent()
        .and_then(Path::parent)
        .map(|run| run.join("metrics.ndjson"));
    match (&a.metrics, beside) {
        (Some(p), _) => Ok(read_records(p)?),
        (None, Some(p)) if p.is_file() => Ok(read_records(&p)?),
        _ => Ok(state.metrics_tail.clone()),
    }
}

/// Writes the diagnostic artifacts and returns their paths.
pub fn write_visualizations(state: &TrainState, records: &[MetricsRecord], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let cfg = state.config.clone();
    let data = dataset_from_config(&cfg)?;
    let trainer = Trainer::new(cfg.clone(), &data)?;
    let store = trainer.eval_generator_store(&state.ema)?;
    let mut written = Vec::new();

    let heatmaps = out.join(HEATMAPS_FILE);
    trainer.render_heatmaps(state, &heatmaps)?;
    written.push(heatmaps);

    // CutMix panel on the first dataset images and same-class fakes.
    let n = cfg.eval.heatmap_samples.min(data.len());
    let idx: Vec<usize> = (0..n).collect();
    let real = data.tensor::<f32>(&idx);
    let labels = data.labels().map(|l| l[..n].to_vec());
    let mut latents = trainer.heatmap_latents();
    latents.z.truncate(n * cfg.model.latent_dim);
    latents.labels = labels.clone();
    let fake = trainer.generator().generate(&Ctx::new(&store, Mode::Eval), &latents)?;
    let s = cfg.model.image_size;
    let mut rng = stream(cfg.eval.seed, STREAM_PANEL_MASKS);
    let masks: Vec<_> = (0..n).map(|_| sample_mask(s, s, &mut rng)).collect();
    let mixed = mix(&real, &fake, &masks)?;
    let all_labels = labels.as_ref().map(|l| l.repeat(3));
    let score = trainer.discriminator().discriminate(
        &Ctx::new(&state.d, Mode::Eval),
        &Tensor::cat_batch(&[&real, &fake, &mixed]),
        all_labels.as_deref(),
    )?;
    let (sr, sf, sm) = (score.narrow(0, n), score.narrow(n, n), score.narrow(2 * n, n));
    let target = mix_maps(&sr.dec_logits.sigmoid(), &sf.dec_logits.sigmoid(), &masks)?;
    let panel = out.join(CUTMIX_PANEL_FILE);
    render_cutmix_panel(&real, &fake, &masks, &mixed, &sm.dec_logits, &target, &panel)?;
    written.push(panel);

    let mut points = Vec::new();
    for (batch, labels) in trainer.sample_batches(&store, SCATTER_SAMPLES)? {
        points.extend(enc_dec_scores(trainer.discriminator(), &state.d, &batch, labels.as_deref())?);
    }
    let scatter = out.join(SCATTER_FILE);
    render_enc_dec_scatter(&points, &scatter)?;
    written.push(scatter);
    written.push(out.join(SCATTER_CSV_FILE));

    if records.iter().any(|r| r.fid.is_some()) {
        let p = out.join(FID_CURVE_FILE);
        plot_fid_curve(records, &p)?;
        written.push(p);
    } else {
        log::warn!("no evaluation records; skipping the FID curve");
    }
    if records.iter().any(|r| r.d_loss.is_some()) {
        let p = out.join(LOSS_CURVES_FILE);
        plot_loss_curves(records, &p)?;
        written.push(p);
    } else {
        log::warn!("no loss records; skipping the loss curves");
    }
    Ok(written)
}

pub fn visualize(a: &VisualizeArgs) -> anyhow::Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let records = metrics_for(a, &state)?;
    for p in write_visualizations(&state, &records, &a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn make_synth(a: &MakeSynthArgs) -> anyhow::Result<()> {
    let ds = synth_shapes_dataset(a.n, a.size, 3, a.classes, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let s = a.size;
    for i in 0..ds.len() {
        let px = ds.image(i);
        let img = image::RgbImage::from_fn(s as u32, s as u32, |x, y| {
            let k = y as usize * s + x as usize;
            image::Rgb([0, 1, 2].map(|c| to_u8_signed(px[c * s * s + k])))
        });
        let dir = match ds.labels() {
            Some(l) => a.out.join(format!("class_{:02}", l[i])),
            None => a.out.clone(),
        };
        std::fs::create_dir_all(&dir)?;
        img.save(dir.join(format!("{i:05}.png")))?;
    }
    std::fs::write(a.out.join("manifest.tsv"), ds.manifest())?;
    println!("{} images written to {}", ds.len(), a.out.display());
    Ok(())
}
