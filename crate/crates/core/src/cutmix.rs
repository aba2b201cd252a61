//! Real/fake CutMix: rectangular masks, mixing of images and decoder maps,
//! and the warm-up schedule for the per-iteration mixing probability.

use rand::Rng as _;
use unetgan_autograd::{Real, Tensor};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Binary `H×W` mask: 1 where the pixel comes from the real image, 0 where it
/// comes from the generated one. The zero region is one axis-aligned
/// rectangle, possibly clipped by the border or empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutMixMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
    /// Half-open rows `y0..y1` and columns `x0..x1` of the fake region.
    rect: (usize, usize, usize, usize),
}

impl CutMixMask {
    /// Mask whose fake region is `rows y0..y1` × `cols x0..x1`.
    pub fn from_rect(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> Self {
        assert!(y0 <= y1 && y1 <= h && x0 <= x1 && x1 <= w, "rectangle outside {h}×{w}");
        let mut bits = vec![true; h * w];
        for row in bits.chunks_mut(w).take(y1).skip(y0) {
            row[x0..x1].fill(false);
        }
        Self {
            h,
            w,
            bits,
            rect: (y0, y1, x0, x1),
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn rect(&self) -> (usize, usize, usize, usize) {
        self.rect
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.w + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// `|M|`, the number of real pixels.
    pub fn count_real(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Real-area ratio `r = |M| / (H·W)`, always recomputed from the mask.
    pub fn real_ratio(&self) -> f64 {
        self.count_real() as f64 / (self.h * self.w) as f64
    }
}

/// Mask for a requested real ratio `r` and box center `(cy, cx)`.
///
/// The fake box has sides `round(H·√(1−r))` and `round(W·√(1−r))`, spans
/// `[c − side/2, c − side/2 + side)` on each axis and is clipped to the
/// image, so the realized ratio can exceed `r` near the borders.
pub fn mask_for_ratio(h: usize, w: usize, r: f64, cy: usize, cx: usize) -> CutMixMask {
    let scale = (1.0 - r.clamp(0.0, 1.0)).sqrt();
    let span = |len: usize, c: usize| {
        let side = (len as f64 * scale).round() as isize;
        let lo = c as isize - side / 2;
        (lo.clamp(0, len as isize) as usize, (lo + side).clamp(0, len as isize) as usize)
    };
    let (y0, y1) = span(h, cy);
    let (x0, x1) = span(w, cx);
    CutMixMask::from_rect(h, w, y0, y1, x0, x1)
}

/// Draws `r ~ U(0,1)` and a uniform box center, then builds the mask.
pub fn sample_mask(h: usize, w: usize, rng: &mut Rng) -> CutMixMask {
    let r: f64 = rng.random();
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    mask_for_ratio(h, w, r, cy, cx)
}

/// Masks flattened to `N×H×W` numbers (1 real, 0 fake).
pub fn mask_values<T: Real>(masks: &[CutMixMask]) -> Vec<T> {
    masks
        .iter()
        .flat_map(|m| m.bits.iter().map(|&b| if b { T::one() } else { T::zero() }))
        .collect()
}

fn check_masks<T: Real>(a: &Tensor<T>, b: &Tensor<T>, masks: &[CutMixMask]) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("mix operands {:?} vs {:?}", a.shape(), b.shape())));
    }
    let [n, _, h, w] = *a.shape() else {
        return Err(Error::Shape(format!("mix expects N×C×H×W, got {:?}", a.shape())));
    };
    if masks.len() != n {
        return Err(Error::Shape(format!("{} masks for batch of {n}", masks.len())));
    }
    if let Some(m) = masks.iter().find(|m| (m.h, m.w) != (h, w)) {
        return Err(Error::Shape(format!("mask is {}×{}, images are {h}×{w}", m.h, m.w)));
    }
    Ok(())
}

/// `M ⊙ x + (1 − M) ⊙ g`, mask broadcast over channels. Differentiable in
/// both operands.
pub fn mix<T: Real>(x: &Tensor<T>, g: &Tensor<T>, masks: &[CutMixMask]) -> Result<Tensor<T>> {
    check_masks(x, g, masks)?;
    Ok(x.masked_blend(g, &mask_values(masks)))
}

/// [`mix`] applied to `N×1×H×W` decoder outputs.
pub fn mix_maps<T: Real>(a: &Tensor<T>, b: &Tensor<T>, masks: &[CutMixMask]) -> Result<Tensor<T>> {
    if a.shape().get(1) != Some(&1) {
        return Err(Error::Shape(format!("mix_maps expects N×1×H×W, got {:?}", a.shape())));
    }
    mix(a, b, masks)
}

/// Probability of a CutMix step at (fractional) `epoch`: linear ramp from 0
/// to `pmix_max` over `warmup_epochs`, constant afterwards.
pub fn pmix_schedule(epoch: f64, warmup_epochs: usize, pmix_max: f64) -> f64 {
    let epoch = epoch.max(0.0);
    (pmix_max * epoch / warmup_epochs as f64).min(pmix_max)
}

/// Mixed images with their masks. The per-image target is always fake.
#[derive(Debug, Clone)]
pub struct CutMixBatch<T: Real> {
    pub images: Tensor<T>,
    pub masks: Vec<CutMixMask>,
    pub labels: Option<Vec<usize>>,
}

impl<T: Real> CutMixBatch<T> {
    /// Encoder target class for every mixed image.
    pub const ENC_TARGET: f64 = 0.0;

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Pairs real sample `i` with fake sample `i`, drawing an independent mask
/// for each pair. In conditional mode both members of every pair must share
/// a class.
pub fn build_cutmix_batch<T: Real>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    real_labels: Option<&[usize]>,
    fake_labels: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<CutMixBatch<T>> {
    let [n, _, h, w] = *real.shape() else {
        return Err(Error::Shape(format!("expected N×C×H×W, got {:?}", real.shape())));
    };
    let labels = match (real_labels, fake_labels) {
        (None, None) => None,
        (Some(a), Some(b)) => {
            if a.len() != n || b.len() != n {
                return Err(Error::Shape("label count does not match batch".into()));
            }
            if let Some(i) = (0..n).find(|&i| a[i] != b[i]) {
                return Err(Error::ClassMismatch(format!(
                    "pair {i} mixes real class {} with fake class {}",
                    a[i], b[i]
                )));
            }
            Some(a.to_vec())
        }
        _ => return Err(Error::ClassMismatch("labels given for only one side".into())),
    };
    let masks: Vec<CutMixMask> = (0..n).map(|_| sample_mask(h, w, rng)).collect();
    let images = mix(real, fake, &masks)?;
    Ok(CutMixBatch { images, masks, labels })
}
