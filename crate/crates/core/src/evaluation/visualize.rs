//! Diagnostic images and plots: per-pixel decoder heatmaps, encoder versus
//! decoder score scatter, CutMix panels, and metric curves.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use plotters::prelude::*;
use unetgan_autograd::{Real, Tensor};

use crate::cutmix::CutMixMask;
use crate::discriminator::{mean_pixel_score, UNetDiscriminator};
use crate::error::{Error, Result};
use crate::generator::{Generator, LatentBatch};
use crate::metrics::MetricsRecord;
use crate::nn::{Ctx, Mode, ParamStore};

/// `[−1, 1]` to an 8-bit level.
pub fn to_u8_signed(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Probability `[0, 1]` to an 8-bit gray level, `round(255·p)`.
pub fn to_u8_prob(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn paste_image(canvas: &mut RgbImage, img: &[f32], channels: usize, s: usize, col: usize, row: usize) {
    let plane = s * s;
    for y in 0..s {
        for x in 0..s {
            let px = |c: usize| to_u8_signed(img[c.min(channels - 1) * plane + y * s + x]);
            canvas.put_pixel((col * s + x) as u32, (row * s + y) as u32, Rgb([px(0), px(1), px(2)]));
        }
    }
}

fn paste_gray(canvas: &mut RgbImage, probs: &[f64], s: usize, col: usize, row: usize) {
    for y in 0..s {
        for x in 0..s {
            let g = to_u8_prob(probs[y * s + x]);
            canvas.put_pixel((col * s + x) as u32, (row * s + y) as u32, Rgb([g, g, g]));
        }
    }
}

/// Grid of `rows × n` tiles of side `s`. Each row is either images
/// (`C×S×S` per sample, `[−1, 1]`) or probability maps (`S×S`, `[0, 1]`).
pub enum GridRow<'a> {
    Images { data: &'a [f32], channels: usize },
    Probabilities(&'a [f64]),
}

pub fn tile_grid(rows: &[GridRow<'_>], n: usize, s: usize) -> RgbImage {
    let mut canvas = RgbImage::new((n * s) as u32, (rows.len() * s) as u32);
    for (r, row) in rows.iter().enumerate() {
        for i in 0..n {
            match row {
                GridRow::Images { data, channels } => {
                    let per = channels * s * s;
                    paste_image(&mut canvas, &data[i * per..(i + 1) * per], *channels, s, i, r);
                }
                GridRow::Probabilities(p) => paste_gray(&mut canvas, &p[i * s * s..(i + 1) * s * s], s, i, r),
            }
        }
    }
    canvas
}

/// Two-row grid: samples on top, decoder real-probability maps below, with
/// the fixed mapping `gray = round(255·σ(logit))`.
pub fn heatmap_grid(samples: &Tensor<f32>, dec_logits: &Tensor<f32>) -> RgbImage {
    let (n, c, s, _) = samples.dims4();
    let probs: Vec<f64> = dec_logits.sigmoid().data().iter().map(|&v| v as f64).collect();
    tile_grid(
        &[
            GridRow::Images {
                data: samples.data(),
                channels: c,
            },
            GridRow::Probabilities(&probs),
        ],
        n,
        s,
    )
}

/// Generates samples in eval mode, scores them, and writes the heatmap grid.
/// Returns the decoder probability maps (`N×S×S`) that were drawn.
pub fn render_decoder_heatmaps(
    generator: &Generator,
    g_store: &ParamStore<f32>,
    disc: &UNetDiscriminator,
    d_store: &ParamStore<f32>,
    latents: &LatentBatch<f32>,
    path: &Path,
) -> Result<Vec<f64>> {
    let samples = generator.generate(&Ctx::new(g_store, Mode::Eval), latents)?;
    let score = disc.discriminate(&Ctx::new(d_store, Mode::Eval), &samples, latents.labels.as_deref())?;
    heatmap_grid(&samples, &score.dec_logits).save(path)?;
    Ok(score.dec_logits.sigmoid().data().iter().map(|&v| v as f64).collect())
}

/// `(σ(encoder logit), mean decoder probability)` for each image.
pub fn enc_dec_scores<T: Real>(
    disc: &UNetDiscriminator,
    d_store: &ParamStore<T>,
    images: &Tensor<T>,
    labels: Option<&[usize]>,
) -> Result<Vec<(f64, f64)>> {
    let score = disc.discriminate(&Ctx::new(d_store, Mode::Eval), images, labels)?;
    let enc = score.enc_logit.sigmoid().to_vec();
    let dec = mean_pixel_score(&score);
    Ok(enc
        .iter()
        .zip(&dec)
        .map(|(e, d)| (e.to_f64().unwrap(), d.to_f64().unwrap()))
        .collect())
}

fn render_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Render(e.to_string())
}

/// Scatter of encoder against decoder scores on `[0, 1]²` as SVG, with the
/// same points written to a CSV next to it.
pub fn render_enc_dec_scatter(points: &[(f64, f64)], svg_path: &Path) -> Result<()> {
    {
        let root = SVGBackend::new(svg_path, (480, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(render_err)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(44)
            .build_cartesian_2d(0f64..1f64, 0f64..1f64)
            .map_err(render_err)?;
        chart
            .configure_mesh()
            .x_desc("encoder score")
            .y_desc("mean decoder score")
            .draw()
            .map_err(render_err)?;
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
            .map_err(render_err)?;
        root.present().map_err(render_err)?;
    }
    let mut csv = String::from("encoder_score,decoder_score\n");
    for (e, d) in points {
        let _ = writeln!(csv, "{e},{d}");
    }
    std::fs::write(svg_path.with_extension("csv"), csv)?;
    Ok(())
}

/// Six-row panel per CutMix pair: real, fake, mask, mixed image, decoder
/// probabilities on the mixed image, and the mixed decoder probabilities of
/// the sources.
pub fn render_cutmix_panel(
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    masks: &[CutMixMask],
    mixed: &Tensor<f32>,
    dec_on_mixed: &Tensor<f32>,
    mixed_target: &Tensor<f32>,
    path: &Path,
) -> Result<()> {
    let (n, c, s, _) = real.dims4();
    let probs = |t: &Tensor<f32>| t.sigmoid().data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mask_vals: Vec<f64> = masks
        .iter()
        .flat_map(|m| m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    let on_mixed = probs(dec_on_mixed);
    let target: Vec<f64> = mixed_target.data().iter().map(|&v| v as f64).collect();
    fn img(t: &Tensor<f32>, channels: usize) -> GridRow<'_> {
        GridRow::Images { data: t.data(), channels }
    }
    let grid = tile_grid(
        &[
            img(real, c),
            img(fake, c),
            GridRow::Probabilities(&mask_vals),
            img(mixed, c),
            GridRow::Probabilities(&on_mixed),
            GridRow::Probabilities(&target),
        ],
        n,
        s,
    );
    grid.save(path)?;
    Ok(())
}

fn line_chart(path: &Path, title: &str, series: &[(&str, Vec<(f64, f64)>)], colors: &[RGBColor]) -> Result<()> {
    let xs = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1));
    let (x0, x1) = xs.fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
    let (y0, y1) = ys.fold((f64::MAX, f64::MIN), |(a, b), y| (a.min(y), b.max(y)));
    if x0 > x1 {
        return Err(Error::Render(format!("no data for {title}")));
    }
    let pad = |lo: f64, hi: f64| {
        let d = (hi - lo).abs().max(1e-9) * 0.05;
        (lo - d, hi + d)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(render_err)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .draw()
        .map_err(render_err)?;
    for ((name, pts), color) in series.iter().zip(colors.iter().cycle()) {
        let color = *color;
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color))
            .map_err(render_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(render_err)?;
    }
    root.present().map_err(render_err)?;
    Ok(())
}

/// `(iteration, fid)` pairs of the evaluation records, in log order.
pub fn fid_series(records: &[MetricsRecord]) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter_map(|r| r.fid.map(|f| (r.iteration, f)))
        .collect()
}

/// Proxy-FID over iterations. Returns the plotted points.
pub fn plot_fid_curve(records: &[MetricsRecord], path: &Path) -> Result<Vec<(u64, f64)>> {
    let pts = fid_series(records);
    let xy = pts.iter().map(|&(i, f)| (i as f64, f)).collect();
    line_chart(path, "proxy-FID", &[("fid", xy)], &[RED])?;
    Ok(pts)
}

/// Discriminator and generator loss totals over iterations.
pub fn plot_loss_curves(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let d = records
        .iter()
        .filter_map(|r| r.d_loss.map(|l| (r.iteration as f64, l.total)))
        .collect();
    let g = records
        .iter()
        .filter_map(|r| r.g_loss.map(|l| (r.iteration as f64, l.total)))
        .collect();
    line_chart(path, "losses", &[("discriminator", d), ("generator", g)], &[BLUE, RED])
}
