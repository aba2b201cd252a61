//! Image datasets: folder ingestion, procedurally rendered shapes, and
//! seeded drop-last batching.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::Rng as _;
use sha2::{Digest, Sha256};
use unetgan_autograd::{Real, Tensor};

use crate::config::{Config, DataSource};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Images stored as `N×C×S×S` values in `[−1, 1]`, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<f32>,
    labels: Option<Vec<usize>>,
    image_size: usize,
    channels: usize,
    num_classes: usize,
    /// Where each sample came from (file path or synthetic index).
    sources: Vec<String>,
}

impl Dataset {
    /// Validates shapes, value range and labels.
    pub fn new(
        pixels: Vec<f32>,
        labels: Option<Vec<usize>>,
        image_size: usize,
        channels: usize,
        num_classes: usize,
        sources: Vec<String>,
    ) -> Result<Self> {
        let per = channels * image_size * image_size;
        if per == 0 || !pixels.len().is_multiple_of(per) {
            return Err(Error::Data(format!(
                "{} values is not a whole number of {channels}x{image_size}x{image_size} images",
                pixels.len()
            )));
        }
        let n = pixels.len() / per;
        if let Some(v) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [-1, 1]")));
        }
        if sources.len() != n {
            return Err(Error::Data("one source entry per sample required".into()));
        }
        match &labels {
            Some(l) => {
                if num_classes == 0 || l.len() != n {
                    return Err(Error::Data("labels need num_classes > 0 and one label per sample".into()));
                }
                if let Some(bad) = l.iter().find(|&&y| y >= num_classes) {
                    return Err(Error::Data(format!("label {bad} out of range for {num_classes} classes")));
                }
            }
            None if num_classes != 0 => {
                return Err(Error::Data("num_classes set but no labels given".into()));
            }
            None => {}
        }
        let ds = Self {
            pixels,
            labels,
            image_size,
            channels,
            num_classes,
            sources,
        };
        if let Some(c) = ds.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    /// Samples per class; empty for unconditional data.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in self.labels.iter().flatten() {
            counts[y] += 1;
        }
        counts
    }

    fn per_image(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }

    /// Pixels of sample `i`, `C×S×S`.
    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.per_image();
        &self.pixels[i * p..(i + 1) * p]
    }

    /// Stacks the given samples into an `N×C×S×S` constant tensor.
    pub fn tensor<T: Real>(&self, indices: &[usize]) -> Tensor<T> {
        let data = indices
            .iter()
            .flat_map(|&i| self.image(i).iter().map(|&v| T::lit(v as f64)))
            .collect();
        Tensor::constant(data, &[indices.len(), self.channels, self.image_size, self.image_size])
    }

    /// SHA-256 over pixels and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.pixels {
            h.update(v.to_le_bytes());
        }
        for y in self.labels.iter().flatten() {
            h.update((*y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Tab-separated `source, label, sha256` lines, one per sample.
    pub fn manifest(&self) -> String {
        let mut out = String::from("source\tlabel\tsha256\n");
        for i in 0..self.len() {
            let mut h = Sha256::new();
            for v in self.image(i) {
                h.update(v.to_le_bytes());
            }
            let label = self.labels.as_ref().map_or("-".to_string(), |l| l[i].to_string());
            let _ = writeln!(out, "{}\t{label}\t{}", self.sources[i], hex::encode(h.finalize()));
        }
        out
    }
}

/// Builds the dataset a configuration describes.
pub fn dataset_from_config(cfg: &Config) -> Result<Dataset> {
    let m = &cfg.model;
    match cfg.data.source {
        DataSource::Synth => synth_shapes_dataset(cfg.data.synth_samples, m.image_size, m.channels, m.num_classes, cfg.data.synth_seed),
        DataSource::Folder => {
            let root = cfg
                .data
                .path
                .as_deref()
                .ok_or_else(|| Error::Config("data.path is required for folder datasets".into()))?;
            let (ds, report) = load_image_folder(Path::new(root), m.image_size, m.channels, m.is_conditional())?;
            if !report.skipped.is_empty() {
                log::warn!("{} unreadable files skipped", report.skipped.len());
            }
            Ok(ds)
        }
    }
}

/// Files that could not be decoded during [`load_image_folder`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub skipped: Vec<PathBuf>,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Center-crops to a square, resizes with a triangle (bilinear) filter and
/// maps `[0, 1]` to `[−1, 1]`. One channel means luma.
pub fn preprocess(img: &image::DynamicImage, image_size: usize, channels: usize) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let side = w.min(h);
    let cropped = img.crop_imm((w - side) / 2, (h - side) / 2, side, side);
    let s = image_size as u32;
    let mut out = Vec::with_capacity(channels * image_size * image_size);
    if channels == 1 {
        let gray = image::DynamicImage::ImageLuma8(cropped.to_luma8()).to_rgb32f();
        let resized = imageops::resize(&gray, s, s, FilterType::Triangle);
        out.extend(resized.pixels().map(|p| p.0[0].clamp(0.0, 1.0) * 2.0 - 1.0));
    } else {
        let resized = imageops::resize(&cropped.to_rgb32f(), s, s, FilterType::Triangle);
        for c in 0..3 {
            out.extend(resized.pixels().map(|p| p.0[c].clamp(0.0, 1.0) * 2.0 - 1.0));
        }
    }
    out
}

/// Loads every PNG/JPEG under `root` in sorted path order. In conditional
/// mode each subdirectory of `root` is one class, labelled by sorted name.
/// Undecodable files are skipped and reported.
pub fn load_image_folder(
    root: &Path,
    image_size: usize,
    channels: usize,
    conditional: bool,
) -> Result<(Dataset, LoadReport)> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset folder not found: {}", root.display())));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Data(format!("unsupported channel count {channels}")));
    }
    let groups: Vec<(Option<usize>, PathBuf, Vec<PathBuf>)> = if conditional {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(Error::Data("conditional layout needs one subdirectory per class".into()));
        }
        dirs.iter()
            .enumerate()
            .map(|(y, d)| Ok((Some(y), d.clone(), image_files(d)?)))
            .collect::<Result<_>>()?
    } else {
        vec![(None, root.to_path_buf(), image_files(root)?)]
    };

    let num_classes = if conditional { groups.len() } else { 0 };
    let mut report = LoadReport::default();
    let (mut pixels, mut labels, mut sources) = (Vec::new(), Vec::new(), Vec::new());
    let mut counts = vec![0usize; num_classes];
    for (label, _, files) in &groups {
        for path in files {
            match image::open(path) {
                Ok(img) => {
                    pixels.extend(preprocess(&img, image_size, channels));
                    sources.push(path.display().to_string());
                    if let Some(y) = label {
                        labels.push(*y);
                        counts[*y] += 1;
                    }
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    report.skipped.push(path.clone());
                }
            }
        }
    }
    if let Some(y) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "class {y} ({}) has no readable images",
            groups[y].1.display()
        )));
    }
    if sources.is_empty() {
        return Err(Error::Data(format!("no readable images under {}", root.display())));
    }
    let labels = conditional.then_some(labels);
    Ok((Dataset::new(pixels, labels, image_size, channels, num_classes, sources)?, report))
}

/// Shape drawn for a class (unconditional data draws one at random).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
    HorizontalBar,
    VerticalBar,
    Ellipse,
    Saltire,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 10] = [
        ShapeKind::Disk,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
        ShapeKind::Ring,
        ShapeKind::Diamond,
        ShapeKind::HorizontalBar,
        ShapeKind::VerticalBar,
        ShapeKind::Ellipse,
        ShapeKind::Saltire,
    ];

    /// Whether the point `(u, v)`, in shape-local coordinates scaled so the
    /// shape fits the unit disk, lies inside.
    fn contains(self, u: f64, v: f64) -> bool {
        let (au, av) = (u.abs(), v.abs());
        match self {
            ShapeKind::Disk => u * u + v * v <= 1.0,
            ShapeKind::Square => au <= 0.75 && av <= 0.75,
            ShapeKind::Triangle => (-0.9..=0.6).contains(&v) && au <= (v + 0.9) * 0.6,
            ShapeKind::Cross => (au <= 0.25 && av <= 0.9) || (av <= 0.25 && au <= 0.9),
            ShapeKind::Ring => {
                let r2 = u * u + v * v;
                (0.36..=1.0).contains(&r2)
            }
            ShapeKind::Diamond => au + av <= 1.0,
            ShapeKind::HorizontalBar => au <= 0.95 && av <= 0.35,
            ShapeKind::VerticalBar => au <= 0.35 && av <= 0.95,
            ShapeKind::Ellipse => (u / 1.0).powi(2) + (v / 0.55).powi(2) <= 1.0,
            ShapeKind::Saltire => {
                let (d1, d2) = ((u - v).abs(), (u + v).abs());
                (d1 <= 0.35 && d2 <= 1.3) || (d2 <= 0.35 && d1 <= 1.3)
            }
        }
    }
}

const SUPERSAMPLE: usize = 2;

fn render_shape(kind: ShapeKind, size: usize, rng: &mut Rng) -> [Vec<f32>; 3] {
    let s = size as f64;
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.35));
    let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.45..1.0));
    let radius = rng.random_range(0.2..0.4) * s;
    let cx = rng.random_range(radius..s - radius);
    let cy = rng.random_range(radius..s - radius);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = angle.sin_cos();
    let mut planes: [Vec<f32>; 3] = std::array::from_fn(|_| vec![0.0; size * size]);
    let sub = 1.0 / SUPERSAMPLE as f64;
    for i in 0..size {
        for j in 0..size {
            let mut cover = 0.0;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let y = i as f64 + (a as f64 + 0.5) * sub - cy;
                    let x = j as f64 + (b as f64 + 0.5) * sub - cx;
                    let (u, v) = ((cos * x + sin * y) / radius, (-sin * x + cos * y) / radius);
                    if kind.contains(u, v) {
                        cover += 1.0;
                    }
                }
            }
            cover /= (SUPERSAMPLE * SUPERSAMPLE) as f64;
            for c in 0..3 {
                let v = bg[c] + cover * (fg[c] - bg[c]);
                planes[c][i * size + j] = (v * 2.0 - 1.0) as f32;
            }
        }
    }
    planes
}

/// Procedural dataset of colored shapes on plain backgrounds. With classes,
/// sample `i` has label `i mod num_classes` and the class fixes the shape;
/// position, scale, rotation and colors are random. Fully determined by
/// `seed`.
pub fn synth_shapes_dataset(
    n: usize,
    image_size: usize,
    channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 1 || num_classes > ShapeKind::ALL.len() {
        return Err(Error::InvalidArgument(format!("num_classes must be 0 or 2..=10, got {num_classes}")));
    }
    if n == 0 || image_size < 4 {
        return Err(Error::InvalidArgument("need at least one sample of at least 4 px".into()));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Data(format!("unsupported channel count {channels}")));
    }
    let mut rng = stream(seed, 0);
    let mut pixels = Vec::with_capacity(n * channels * image_size * image_size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let kind = if num_classes > 0 {
            labels.push(i % num_classes);
            ShapeKind::ALL[i % num_classes]
        } else {
            ShapeKind::ALL[rng.random_range(0..4)]
        };
        let planes = render_shape(kind, image_size, &mut rng);
        if channels == 3 {
            planes.iter().for_each(|p| pixels.extend_from_slice(p));
        } else {
            pixels.extend((0..image_size * image_size).map(|k| {
                let l = 0.299 * planes[0][k] + 0.587 * planes[1][k] + 0.114 * planes[2][k];
                l.clamp(-1.0, 1.0)
            }));
        }
    }
    let sources = (0..n).map(|i| format!("synth:{seed}:{i}")).collect();
    let labels = (num_classes > 0).then_some(labels);
    Dataset::new(pixels, labels, image_size, channels, num_classes, sources)
}

/// One mini-batch: dataset indices plus their labels in conditional mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    /// Batch positions grouped by class, for within-class pairing.
    pub fn class_groups(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (pos, &y) in self.labels.iter().flatten().enumerate() {
            groups.entry(y).or_default().push(pos);
        }
        groups
    }
}

const SHUFFLE_STREAM_BASE: u64 = 1 << 32;

/// Full batches of epoch `epoch` under a shuffle seeded by `(seed, epoch)`;
/// the ragged tail is dropped.
pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::Data(format!(
            "batch size {batch_size} invalid for dataset of {}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut stream(seed, SHUFFLE_STREAM_BASE + epoch));
    Ok(order
        .chunks_exact(batch_size)
        .map(|c| Batch {
            indices: c.to_vec(),
            labels: dataset.labels().map(|l| c.iter().map(|&i| l[i]).collect()),
        })
        .collect())
}

/// Batch used at training iteration `it`: batch `it mod B` of epoch
/// `it div B`, where `B` is the number of full batches per epoch.
pub fn batch_for_iteration(dataset: &Dataset, batch_size: usize, seed: u64, it: u64) -> Result<Batch> {
    let per_epoch = (dataset.len() / batch_size.max(1)) as u64;
    let mut all = batches(dataset, batch_size, seed, it / per_epoch.max(1))?;
    Ok(all.swap_remove((it % per_epoch) as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_last_partition() {
        let ds = synth_shapes_dataset(103, 8, 3, 0, 1).unwrap();
        let b = batches(&ds, 10, 3, 0).unwrap();
        assert_eq!(b.len(), 10);
        let mut seen: Vec<usize> = b.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 100);
        assert_ne!(b, batches(&ds, 10, 3, 1).unwrap());
        assert_eq!(b, batches(&ds, 10, 3, 0).unwrap());
        assert!(batches(&ds, 104, 3, 0).is_err());
    }

    #[test]
    fn iteration_batches_follow_epochs() {
        let ds = synth_shapes_dataset(25, 8, 3, 0, 1).unwrap();
        let e1 = batches(&ds, 4, 9, 1).unwrap();
        assert_eq!(batch_for_iteration(&ds, 4, 9, 6).unwrap(), e1[0]);
        assert_eq!(batch_for_iteration(&ds, 4, 9, 11).unwrap(), e1[5]);
    }

    #[test]
    fn balanced_classes() {
        let ds = synth_shapes_dataset(300, 8, 3, 3, 5).unwrap();
        assert_eq!(ds.class_counts(), vec![100, 100, 100]);
        let b = &batches(&ds, 12, 0, 0).unwrap()[0];
        let groups = b.class_groups();
        assert_eq!(groups.values().map(Vec::len).sum::<usize>(), 12);
        for (y, pos) in groups {
            assert!(pos.iter().all(|&p| b.labels.as_ref().unwrap()[p] == y));
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![0.0; 12], None, 2, 3, 0, vec!["a".into()]).is_ok());
        assert!(Dataset::new(vec![1.5; 12], None, 2, 3, 0, vec!["a".into()]).is_err());
        assert!(Dataset::new(vec![0.0; 12], Some(vec![2]), 2, 3, 2, vec!["a".into()]).is_err());
        // Declared class 1 without samples.
        assert!(Dataset::new(vec![0.0; 12], Some(vec![0]), 2, 3, 2, vec!["a".into()]).is_err());
    }
}
