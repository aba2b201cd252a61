//! Adversarial objectives for the two discriminator heads, the generator
//! objective, CutMix supervision and the per-pixel consistency penalty.
//!
//! All functions take raw logits and return scalar tensors so the same code
//! drives both training (`f32`) and gradient verification (`f64`).
//! Expectations are batch means; per-pixel terms are averaged over pixels so
//! that the image-level and pixel-level terms share a scale.

use serde::{Deserialize, Serialize};
use unetgan_autograd::{Real, Tensor};

use crate::config::AdversarialVariant;
use crate::cutmix::{mask_values, mix_maps, CutMixMask};
use crate::error::Result;

/// Mean of `−ln σ(x)` (target real) over all elements.
fn real_term_ns<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.log_sigmoid().mean_all().neg()
}

/// Mean of `−ln(1 − σ(x)) = −ln σ(−x)` (target fake).
fn fake_term_ns<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.neg().log_sigmoid().mean_all().neg()
}

/// Mean of `max(0, 1 − x)`.
fn real_term_hinge<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.neg().add_scalar(T::one()).relu().mean_all()
}

/// Mean of `max(0, 1 + x)`.
fn fake_term_hinge<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.add_scalar(T::one()).relu().mean_all()
}

fn d_loss<T: Real>(real: &Tensor<T>, fake: &Tensor<T>, variant: AdversarialVariant) -> Tensor<T> {
    match variant {
        AdversarialVariant::NonSaturating => real_term_ns(real).add(&fake_term_ns(fake)),
        AdversarialVariant::Hinge => real_term_hinge(real).add(&fake_term_hinge(fake)),
    }
}

/// Image-level discriminator loss on `N` logits per side.
pub fn enc_d_loss<T: Real>(real_logits: &Tensor<T>, fake_logits: &Tensor<T>, variant: AdversarialVariant) -> Tensor<T> {
    d_loss(real_logits, fake_logits, variant)
}

/// Pixel-level discriminator loss on `N×1×H×W` logit maps, averaged over
/// pixels and then over the batch.
pub fn dec_d_loss<T: Real>(real_maps: &Tensor<T>, fake_maps: &Tensor<T>, variant: AdversarialVariant) -> Tensor<T> {
    d_loss(real_maps, fake_maps, variant)
}

/// Generator objective on one head: `−mean ln σ(x)` (non-saturating) or
/// `−mean x` (hinge).
fn g_term<T: Real>(x: &Tensor<T>, variant: AdversarialVariant) -> Tensor<T> {
    match variant {
        AdversarialVariant::NonSaturating => real_term_ns(x),
        AdversarialVariant::Hinge => x.mean_all().neg(),
    }
}

/// Scalar values of a generator loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLossBreakdown {
    pub enc_term: f64,
    pub dec_term: f64,
    pub total: f64,
}

/// Generator loss on both heads with equal weight. Pass `None` for the
/// decoder maps to train against the image-level head only.
pub fn g_loss<T: Real>(
    fake_enc_logits: &Tensor<T>,
    fake_dec_maps: Option<&Tensor<T>>,
    variant: AdversarialVariant,
) -> (Tensor<T>, GeneratorLossBreakdown) {
    let enc = g_term(fake_enc_logits, variant);
    let enc_term = enc.item().to_f64().unwrap();
    let (total, dec_term) = match fake_dec_maps {
        Some(maps) => {
            let dec = g_term(maps, variant);
            let v = dec.item().to_f64().unwrap();
            (enc.add(&dec), v)
        }
        None => (enc, 0.0),
    };
    (
        total,
        GeneratorLossBreakdown {
            enc_term,
            dec_term,
            total: enc_term + dec_term,
        },
    )
}

/// Squared L2 distance between the decoder's probabilities on the mixed
/// images and the identically mixed probabilities on the source images,
/// summed over pixels and averaged over the batch. Inputs are logits; both
/// sides stay differentiable.
pub fn consistency_loss<T: Real>(
    dec_on_mixed: &Tensor<T>,
    dec_on_real: &Tensor<T>,
    dec_on_fake: &Tensor<T>,
    masks: &[CutMixMask],
) -> Result<Tensor<T>> {
    let target = mix_maps(&dec_on_real.sigmoid(), &dec_on_fake.sigmoid(), masks)?;
    if target.shape() != dec_on_mixed.shape() {
        return Err(crate::error::Error::Shape(format!(
            "mixed maps {:?} vs targets {:?}",
            dec_on_mixed.shape(),
            target.shape()
        )));
    }
    Ok(dec_on_mixed
        .sigmoid()
        .sub(&target)
        .square()
        .sum_per_sample()
        .mean_all())
}

/// Encoder half of the CutMix supervision: every mixed image is fake.
pub fn cutmix_encoder_loss<T: Real>(enc_logits_on_mixed: &Tensor<T>, variant: AdversarialVariant) -> Tensor<T> {
    match variant {
        AdversarialVariant::NonSaturating => fake_term_ns(enc_logits_on_mixed),
        AdversarialVariant::Hinge => fake_term_hinge(enc_logits_on_mixed),
    }
}

/// Supervision from a CutMix batch: every mixed image is fake for the
/// encoder head, and each pixel's target for the decoder head is its mask
/// value. Returns `(encoder term, decoder term)`.
pub fn cutmix_supervision_loss<T: Real>(
    enc_logits_on_mixed: &Tensor<T>,
    dec_maps_on_mixed: &Tensor<T>,
    masks: &[CutMixMask],
    variant: AdversarialVariant,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let enc = cutmix_encoder_loss(enc_logits_on_mixed, variant);
    let x = dec_maps_on_mixed;
    let (as_real, as_fake) = match variant {
        AdversarialVariant::NonSaturating => (x.log_sigmoid().neg(), x.neg().log_sigmoid().neg()),
        AdversarialVariant::Hinge => (
            x.neg().add_scalar(T::one()).relu(),
            x.add_scalar(T::one()).relu(),
        ),
    };
    if x.shape()[0] != masks.len() {
        return Err(crate::error::Error::Shape("one mask per mixed sample required".into()));
    }
    let per_pixel = as_real.masked_blend(&as_fake, &mask_values::<T>(masks));
    Ok((enc, per_pixel.mean_all()))
}

/// Original two-player objective with non-saturating generator loss:
/// `(L_D, L_G)`.
pub fn vanilla_losses<T: Real>(real_logit: &Tensor<T>, fake_logit: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (
        d_loss(real_logit, fake_logit, AdversarialVariant::NonSaturating),
        real_term_ns(fake_logit),
    )
}

/// Scalar values of one discriminator objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorLossBreakdown {
    pub enc_term: f64,
    pub dec_term: f64,
    pub cutmix_enc_term: f64,
    pub cutmix_dec_term: f64,
    pub consistency_term: f64,
    pub lambda: f64,
    pub total: f64,
}

impl DiscriminatorLossBreakdown {
    /// Builds a breakdown whose `total` is the weighted sum of the terms.
    pub fn new(enc: f64, dec: f64, cutmix_enc: f64, cutmix_dec: f64, consistency: f64, lambda: f64) -> Self {
        Self {
            enc_term: enc,
            dec_term: dec,
            cutmix_enc_term: cutmix_enc,
            cutmix_dec_term: cutmix_dec,
            consistency_term: consistency,
            lambda,
            total: enc + dec + cutmix_enc + cutmix_dec + lambda * consistency,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.enc_term,
            self.dec_term,
            self.cutmix_enc_term,
            self.cutmix_dec_term,
            self.consistency_term,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Differentiable total plus its breakdown.
pub struct DiscriminatorObjective<T: Real> {
    pub total: Tensor<T>,
    pub breakdown: DiscriminatorLossBreakdown,
}

/// Tensors entering the full discriminator objective.
pub struct DiscriminatorTerms<T: Real> {
    pub enc: Tensor<T>,
    pub dec: Option<Tensor<T>>,
    pub cutmix: Option<(Tensor<T>, Option<Tensor<T>>)>,
    pub consistency: Option<Tensor<T>>,
    pub lambda: f64,
}

/// `enc + dec + cutmix_enc + cutmix_dec + λ·consistency`, skipping absent
/// terms.
pub fn combine_discriminator_terms<T: Real>(terms: DiscriminatorTerms<T>) -> DiscriminatorObjective<T> {
    let val = |t: &Tensor<T>| t.item().to_f64().unwrap();
    let mut total = terms.enc.clone();
    let enc = val(&terms.enc);
    let mut dec = 0.0;
    if let Some(d) = &terms.dec {
        dec = val(d);
        total = total.add(d);
    }
    let (mut ce, mut cd) = (0.0, 0.0);
    if let Some((e, d)) = &terms.cutmix {
        ce = val(e);
        total = total.add(e);
        if let Some(d) = d {
            cd = val(d);
            total = total.add(d);
        }
    }
    let mut cons = 0.0;
    if let Some(c) = &terms.consistency {
        cons = val(c);
        total = total.add(&c.mul_scalar(T::lit(terms.lambda)));
    }
    DiscriminatorObjective {
        total,
        breakdown: DiscriminatorLossBreakdown::new(enc, dec, ce, cd, cons, terms.lambda),
    }
}
