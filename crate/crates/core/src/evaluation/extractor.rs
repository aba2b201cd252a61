//! Feature backbones for the Fréchet and Inception-style metrics.
//!
//! The bundled backbone is a small convolutional network whose weights are
//! drawn from a fixed seed, so its scores are comparable across runs of this
//! crate but not with scores computed by other tools.

use sha2::{Digest, Sha256};
use unetgan_autograd::Tensor;

use crate::error::{Error, Result};
use crate::nn::init::gaussian;
use crate::rng::stream;

/// Maps image batches to feature rows.
pub trait FeatureExtractor {
    /// Human-readable backbone name.
    fn id(&self) -> String;
    /// Feature dimension `d`.
    fn dim(&self) -> usize;
    /// SHA-256 of the backbone weights.
    fn digest(&self) -> String;
    /// `N×C×H×W` images in `[−1, 1]` to row-major `N×d` features.
    fn features(&self, images: &Tensor<f32>) -> Result<Vec<f64>>;
}

/// Seed of the bundled backbone weights.
pub const STANDARD_SEED: u64 = 0x5eed_f1d0;
const WIDTHS: [usize; 3] = [16, 32, 64];
const PROXY_CLASSES: usize = 10;
const LOGIT_GAIN: f64 = 8.0;

/// Three 3×3 convolutions with ReLU, average pooling between them, and a
/// global spatial mean; plus a random linear softmax head for the
/// Inception-style score.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    channels: usize,
    seed: u64,
    convs: Vec<(Tensor<f32>, Tensor<f32>)>,
    head: Tensor<f32>,
}

impl RandomConvExtractor {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = stream(seed, 0);
        let mut cin = channels;
        let mut convs = Vec::new();
        for &cout in &WIDTHS {
            let fan_in = (cin * 9) as f64;
            let std = (2.0 / fan_in).sqrt();
            let w = gaussian(&mut rng, cout * cin * 9).iter().map(|v| (v * std) as f32).collect();
            convs.push((
                Tensor::constant(w, &[cout, cin, 3, 3]),
                Tensor::constant(vec![0.0; cout], &[cout]),
            ));
            cin = cout;
        }
        let d = *WIDTHS.last().unwrap();
        let scale = LOGIT_GAIN / (d as f64).sqrt();
        let head = gaussian(&mut rng, PROXY_CLASSES * d).iter().map(|v| (v * scale) as f32).collect();
        Self {
            channels,
            seed,
            convs,
            head: Tensor::constant(head, &[PROXY_CLASSES, d]),
        }
    }

    /// The bundled backbone for `channels`-channel images.
    pub fn standard(channels: usize) -> Self {
        Self::new(channels, STANDARD_SEED)
    }

    pub fn num_classes(&self) -> usize {
        PROXY_CLASSES
    }

    fn embed(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != self.channels || !shape[2].is_multiple_of(4) || !shape[3].is_multiple_of(4) {
            return Err(Error::Shape(format!(
                "extractor expects N×{}×H×W with H, W multiples of 4, got {shape:?}",
                self.channels
            )));
        }
        let mut h = images.clone();
        for (i, (w, b)) in self.convs.iter().enumerate() {
            h = h.conv2d(w, Some(b), 1).relu();
            if i + 1 < self.convs.len() {
                h = h.avg_pool2();
            }
        }
        Ok(h.sum_spatial().mul_scalar(1.0 / (shape[2] * shape[3] / 16) as f32))
    }

    /// Softmax over the random head's logits, row-major `N×K`.
    pub fn class_probs(&self, images: &Tensor<f32>) -> Result<Vec<f64>> {
        let logits = self.embed(images)?.linear(&self.head, None).to_vec();
        Ok(logits
            .chunks(PROXY_CLASSES)
            .flat_map(|row| {
                let m = row.iter().fold(f32::MIN, |a, &b| a.max(b)) as f64;
                let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(move |v| v / s)
            })
            .collect())
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn id(&self) -> String {
        format!("random-conv-{}x{}-seed{:x}", self.channels, WIDTHS.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-"), self.seed)
    }

    fn dim(&self) -> usize {
        *WIDTHS.last().unwrap()
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (w, b) in &self.convs {
            for v in w.data().iter().chain(b.data()) {
                h.update(v.to_le_bytes());
            }
        }
        for v in self.head.data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn features(&self, images: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.embed(images)?.data().iter().map(|&v| v as f64).collect())
    }
}
