//! Synthetic shapes, the image-folder loader, preprocessing and batching.

use std::collections::BTreeSet;
use std::path::Path;

use image::{DynamicImage, Rgb, RgbImage};
use rand::Rng as _;
use unetgan_core::data::{batch_for_iteration, batches, load_image_folder, preprocess, synth_shapes_dataset};
use unetgan_core::rng::stream;
use unetgan_core::Error;

#[test]
fn synthetic_data_is_deterministic_balanced_and_in_range() {
    let a = synth_shapes_dataset(200, 16, 3, 4, 7).unwrap();
    let b = synth_shapes_dataset(200, 16, 3, 4, 7).unwrap();
    let c = synth_shapes_dataset(200, 16, 3, 4, 8).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.digest(), c.digest());
    assert_eq!(a.class_counts(), vec![50; 4]);
    assert_eq!(a.len(), 200);
    for i in 0..a.len() {
        let img = a.image(i);
        assert_eq!(img.len(), 3 * 16 * 16);
        assert!(img.iter().all(|v| (-1.0..=1.0).contains(v)));
        // Not a flat image.
        let (lo, hi) = img.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi - lo > 0.05, "sample {i} is flat");
    }
    let gray = synth_shapes_dataset(20, 32, 1, 0, 7).unwrap();
    assert!(gray.labels().is_none());
    assert_eq!(gray.num_classes(), 0);
    assert_eq!(gray.image(0).len(), 32 * 32);
    for (n, classes) in [(10, 1), (10, 11), (0, 0)] {
        assert!(matches!(synth_shapes_dataset(n, 16, 3, classes, 7), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn dataset_tensor_matches_images() {
    let ds = synth_shapes_dataset(10, 8, 3, 2, 1).unwrap();
    let t = ds.tensor::<f32>(&[3, 7]);
    assert_eq!(t.shape(), &[2, 3, 8, 8]);
    assert_eq!(&t.data()[..192], ds.image(3));
    assert_eq!(&t.data()[192..], ds.image(7));
    let manifest = ds.manifest();
    assert_eq!(manifest.lines().count(), 11);
}

#[test]
fn epochs_are_permutations_and_drop_the_tail() {
    let ds = synth_shapes_dataset(50, 8, 3, 5, 1).unwrap();
    for epoch in 0..3 {
        let bs = batches(&ds, 8, 42, epoch).unwrap();
        assert_eq!(bs.len(), 6);
        let seen: BTreeSet<usize> = bs.iter().flat_map(|b| b.indices.iter().copied()).collect();
        assert_eq!(seen.len(), 48);
        for b in &bs {
            let labels = b.labels.as_ref().unwrap();
            assert!(b.indices.iter().zip(labels).all(|(&i, &y)| ds.labels().unwrap()[i] == y));
            let grouped: usize = b.class_groups().values().map(Vec::len).sum();
            assert_eq!(grouped, 8);
        }
    }
    assert_ne!(batches(&ds, 8, 42, 0).unwrap(), batches(&ds, 8, 42, 1).unwrap());
    assert_eq!(batches(&ds, 8, 42, 0).unwrap(), batches(&ds, 8, 42, 0).unwrap());
    // Iteration 8 is batch 2 of epoch 1.
    assert_eq!(batch_for_iteration(&ds, 8, 42, 8).unwrap(), batches(&ds, 8, 42, 1).unwrap()[2]);
    assert!(matches!(batches(&ds, 51, 42, 0), Err(Error::Data(_))));
    assert!(batches(&ds, 0, 42, 0).is_err());
}

fn write_png(path: &Path, w: u32, h: u32, seed: u64) {
    let mut rng = stream(seed, 0);
    let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

#[test]
fn folder_loader_reads_flat_and_class_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat");
    for i in 0..4 {
        write_png(&flat.join(format!("{i}.png")), 20 + i, 24, i as u64);
    }
    std::fs::write(flat.join("broken.png"), b"not a png").unwrap();
    std::fs::write(flat.join("notes.txt"), b"ignored").unwrap();
    let (ds, report) = load_image_folder(&flat, 16, 3, false).unwrap();
    assert_eq!(ds.len(), 4);
    assert!(ds.labels().is_none());
    assert_eq!(report.skipped, vec![flat.join("broken.png")]);
    assert!(ds.sources()[0].ends_with("0.png"));

    let classes = dir.path().join("classes");
    for (c, n) in [("b_cats", 2), ("a_dogs", 3)] {
        for i in 0..n {
            write_png(&classes.join(c).join(format!("{i}.png")), 16, 16, 10 + i);
        }
    }
    let (ds, _) = load_image_folder(&classes, 16, 1, true).unwrap();
    assert_eq!(ds.num_classes(), 2);
    // Classes are numbered by sorted directory name.
    assert_eq!(ds.labels().unwrap(), &[0, 0, 0, 1, 1]);
    assert_eq!(ds.channels(), 1);

    std::fs::create_dir_all(classes.join("c_empty")).unwrap();
    assert!(matches!(load_image_folder(&classes, 16, 3, true), Err(Error::Data(_))));
    assert!(matches!(load_image_folder(&dir.path().join("missing"), 16, 3, false), Err(Error::Data(_))));
}

/// Separable triangle-filter resampling written out directly: for output
/// index `o` the source position is `(o + 0.5)·ratio`, the kernel is widened
/// by `max(ratio, 1)`, taps span `floor(pos − support) .. ceil(pos + support)`
/// clamped to the image, and weights are normalized.
fn triangle_weights(input: usize, output: usize) -> Vec<Vec<(usize, f32)>> {
    let ratio = input as f32 / output as f32;
    let sratio = ratio.max(1.0);
    let support = sratio;
    (0..output)
        .map(|o| {
            let pos = (o as f32 + 0.5) * ratio;
            let left = ((pos - support).floor() as i64).clamp(0, input as i64 - 1) as usize;
            let right = ((pos + support).ceil() as i64).clamp(left as i64 + 1, input as i64) as usize;
            let center = pos - 0.5;
            let taps: Vec<(usize, f32)> = (left..right)
                .map(|i| (i, (1.0 - ((i as f32 - center) / sratio).abs()).max(0.0)))
                .collect();
            let sum: f32 = taps.iter().map(|t| t.1).sum();
            taps.into_iter().map(|(i, w)| (i, w / sum)).collect()
        })
        .collect()
}

fn reference_preprocess(img: &RgbImage, size: usize) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let side = w.min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let taps = triangle_weights(side, size);
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        let src = |x: usize, y: usize| img.get_pixel((x0 + x) as u32, (y0 + y) as u32).0[c] as f32 / 255.0;
        // Vertical pass, then horizontal.
        let mut tmp = vec![0.0f32; side * size];
        for (oy, row) in taps.iter().enumerate() {
            for x in 0..side {
                tmp[oy * side + x] = row.iter().map(|&(y, wgt)| wgt * src(x, y)).sum();
            }
        }
        for oy in 0..size {
            for (ox, col) in taps.iter().enumerate() {
                let v: f32 = col.iter().map(|&(x, wgt)| wgt * tmp[oy * side + x]).sum();
                out[c * size * size + oy * size + ox] = v.clamp(0.0, 1.0) * 2.0 - 1.0;
            }
        }
    }
    out
}

#[test]
fn preprocessing_matches_reference_resampler() {
    let mut rng = stream(3, 0);
    let img = RgbImage::from_fn(100, 60, |x, y| {
        // Smooth gradient plus noise so that both crop and filter matter.
        let base = (x * 2 + y) as f32;
        Rgb([(base as u32 % 256) as u8, rng.random(), (255 - y * 4) as u8])
    });
    for size in [16, 32, 64] {
        let got = preprocess(&DynamicImage::ImageRgb8(img.clone()), size, 3);
        let want = reference_preprocess(&img, size);
        assert_eq!(got.len(), want.len());
        let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "size {size}: max deviation {worst}");
    }
    // Gray input through the one-channel path equals any color plane.
    let gray = RgbImage::from_fn(40, 40, |x, y| {
        let v = ((x * 7 + y * 3) % 256) as u8;
        Rgb([v, v, v])
    });
    let one = preprocess(&DynamicImage::ImageRgb8(gray.clone()), 16, 1);
    let three = preprocess(&DynamicImage::ImageRgb8(gray), 16, 3);
    assert!(one.iter().zip(&three[..256]).all(|(a, b)| (a - b).abs() < 1e-6));
}
