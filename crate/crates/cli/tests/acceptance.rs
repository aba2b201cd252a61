//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
//! against the allowed budget. Runs as a plain binary so every criterion
//! reports even when an earlier one fails; exits non-zero if any failed.
//!
//! Artifacts of the long runs are kept under
//! `$CARGO_TARGET_TMPDIR/acceptance/`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Result};
use nalgebra::DMatrix;
use rand::Rng as _;
use unetgan_core::autograd::Tensor;
use unetgan_core::config::AdversarialVariant::{self, Hinge, NonSaturating};
use unetgan_core::config::ModelConfig;
use unetgan_core::cutmix::{build_cutmix_batch, mix, pmix_schedule, sample_mask, CutMixMask};
use unetgan_core::data::{batch_for_iteration, dataset_from_config, Dataset};
use unetgan_core::discriminator::{Skips, UNetDiscriminator};
use unetgan_core::evaluation::{frechet_distance, inception_style_score, FeatureGaussian};
use unetgan_core::generator::{sample_latent, Generator};
use unetgan_core::losses::{
    consistency_loss, cutmix_encoder_loss, cutmix_supervision_loss, dec_d_loss, enc_d_loss, g_loss, vanilla_losses,
};
use unetgan_core::nn::{Ctx, Mode, ParamStore};
use unetgan_core::rng::{stream, Rng};
use unetgan_core::trainer::{checkpoint, RunLayout, TrainState, Trainer};
use unetgan_core::{Config, Error};

const EXACT: f64 = 1e-10;

/// Id, title, time budget in seconds, check.
type Criterion = (&'static str, &'static str, u64, fn() -> Result<String>);

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1", "paper-scale FID deviation documented", 1, ac1_documented_deviation),
        ("AC2", "loss identities and scalar oracles", 10, ac2_loss_identities),
        ("AC3", "finite-difference gradients", 120, ac3_gradients),
        ("AC4", "cutmix identities and schedule", 30, ac4_cutmix),
        ("AC5", "consistency loss", 10, ac5_consistency),
        ("AC6", "frechet distance and inception-style score", 30, ac6_frechet_is),
        ("AC7", "architecture", 60, ac7_architecture),
        ("AC8", "determinism and resume", 120, ac8_determinism),
        ("AC9", "desk-scale training smoke", 7200, ac9_training_smoke),
        ("AC10", "ablation harness", 7200, ac10_ablation),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = 0;
    for (id, title, budget, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(anyhow::anyhow!("panicked: {}", panic_message(&p))));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > Duration::from_secs(budget) => {
                Err(anyhow::anyhow!("over time budget; {detail}"))
            }
            other => other,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", format!("{e:#}"))
            }
        };
        println!("{id:<4} {status} {title} [{:.1} s / {budget} s] {detail}", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn artifacts(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("clear previous artifacts");
    }
    std::fs::create_dir_all(&dir).expect("create artifact directory");
    dir
}

// Scalar oracles.

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean(v: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64
}

fn as_real(v: AdversarialVariant) -> fn(f64) -> f64 {
    match v {
        NonSaturating => |x| softplus(-x),
        Hinge => |x| (1.0 - x).max(0.0),
    }
}

fn as_fake(v: AdversarialVariant) -> fn(f64) -> f64 {
    match v {
        NonSaturating => softplus,
        Hinge => |x| (1.0 + x).max(0.0),
    }
}

fn oracle_g(fake: &[f64], v: AdversarialVariant) -> f64 {
    match v {
        NonSaturating => mean(fake, |x| softplus(-x)),
        Hinge => -mean(fake, |x| x),
    }
}

fn oracle_consistency(mixed: &[f64], real: &[f64], fake: &[f64], masks: &[CutMixMask]) -> f64 {
    let hw = masks[0].height() * masks[0].width();
    let mut total = 0.0;
    for (n, m) in masks.iter().enumerate() {
        for (p, &bit) in m.bits().iter().enumerate() {
            let i = n * hw + p;
            let target = if bit { sig(real[i]) } else { sig(fake[i]) };
            total += (sig(mixed[i]) - target).powi(2);
        }
    }
    total / masks.len() as f64
}

fn logits(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn c(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::constant(data.to_vec(), shape)
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<()> {
    ensure!((got - want).abs() <= tol, "{what}: got {got}, expected {want} (tolerance {tol:e})");
    Ok(())
}

fn ac1_documented_deviation() -> Result<String> {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme)?;
    ensure!(
        text.contains("not reproducible") && text.contains("FID"),
        "README does not state that paper-scale FID is not reproducible"
    );
    Ok("README states that paper-scale FID is not reproducible; properties below substitute".into())
}

fn ac2_loss_identities() -> Result<String> {
    let (ln2, ln4) = (2f64.ln(), 4f64.ln());
    let enc = c(&[0.0; 5], &[5]);
    let dec = c(&[0.0; 5 * 64], &[5, 1, 8, 8]);
    close(enc_d_loss(&enc, &enc, NonSaturating).item(), ln4, EXACT, "encoder D at zero logits")?;
    close(dec_d_loss(&dec, &dec, NonSaturating).item(), ln4, EXACT, "decoder D at zero logits")?;
    let (_, parts) = g_loss(&enc, Some(&dec), NonSaturating);
    close(parts.enc_term, ln2, EXACT, "encoder G head at zero logits")?;
    close(parts.dec_term, ln2, EXACT, "decoder G head at zero logits")?;
    let (vd, vg) = vanilla_losses(&enc, &enc);
    close(vd.item(), ln4, EXACT, "two-player D")?;
    close(vg.item(), ln2, EXACT, "two-player G")?;

    let mut rng = stream(2, 0);
    for _ in 0..100 {
        let real: Vec<f64> = (0..6).map(|_| rng.random_range(1.0..8.0)).collect();
        let fake: Vec<f64> = (0..6).map(|_| rng.random_range(-8.0..=-1.0)).collect();
        ensure!(enc_d_loss(&c(&real, &[6]), &c(&fake, &[6]), Hinge).item() == 0.0, "hinge nonzero beyond margin");
        let (r, f) = (c(&real, &[6, 1, 1, 1]), c(&fake, &[6, 1, 1, 1]));
        ensure!(dec_d_loss(&r, &f, Hinge).item() == 0.0, "decoder hinge nonzero beyond margin");
        let m: Vec<CutMixMask> = (0..6).map(|_| CutMixMask::from_rect(1, 1, 0, 1, 0, 1)).collect();
        ensure!(cutmix_encoder_loss(&c(&fake, &[6]), Hinge).item() == 0.0, "cutmix encoder hinge beyond margin");
        ensure!(cutmix_supervision_loss(&c(&fake, &[6]), &f, &m, Hinge)?.1.item() == 0.0, "cutmix decoder hinge");
    }

    let mut cases = 0;
    for case in 0..100 {
        let (n, h) = (1 + case % 4, [2, 4, 8][case % 3]);
        let scale = [0.3, 4.0, 25.0][case % 3];
        let (er, ef) = (logits(&mut rng, n, scale), logits(&mut rng, n, scale));
        let (dr, df) = (logits(&mut rng, n * h * h, scale), logits(&mut rng, n * h * h, scale));
        let masks: Vec<_> = (0..n).map(|_| sample_mask(h, h, &mut rng)).collect();
        let ms = [n, 1, h, h];
        for v in [NonSaturating, Hinge] {
            let oracle_d = |r: &[f64], f: &[f64]| mean(r, as_real(v)) + mean(f, as_fake(v));
            close(enc_d_loss(&c(&er, &[n]), &c(&ef, &[n]), v).item(), oracle_d(&er, &ef), EXACT, "encoder D")?;
            close(dec_d_loss(&c(&dr, &ms), &c(&df, &ms), v).item(), oracle_d(&dr, &df), EXACT, "decoder D")?;
            let (total, _) = g_loss(&c(&ef, &[n]), Some(&c(&df, &ms)), v);
            close(total.item(), oracle_g(&ef, v) + oracle_g(&df, v), EXACT, "G")?;
            let (e, d) = cutmix_supervision_loss(&c(&ef, &[n]), &c(&df, &ms), &masks, v)?;
            close(e.item(), mean(&ef, as_fake(v)), EXACT, "cutmix encoder supervision")?;
            let mut s = 0.0;
            for (k, m) in masks.iter().enumerate() {
                for (p, &bit) in m.bits().iter().enumerate() {
                    let x = df[k * h * h + p];
                    s += if bit { as_real(v)(x) } else { as_fake(v)(x) };
                }
            }
            close(d.item(), s / (n * h * h) as f64, EXACT, "cutmix decoder supervision")?;
        }
        let (vd, vg) = vanilla_losses(&c(&er, &[n]), &c(&ef, &[n]));
        close(vd.item(), mean(&er, |x| softplus(-x)) + mean(&ef, softplus), EXACT, "two-player D")?;
        close(vg.item(), mean(&ef, |x| softplus(-x)), EXACT, "two-player G")?;
        cases += 1;
    }
    Ok(format!("zero-logit identities, hinge margins, {cases} random oracle cases within {EXACT:e}"))
}

// Finite differences.

const FD_STEP: f64 = 1e-3;
const FD_KINK_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

fn fd_inputs(inputs: &[(Vec<f64>, Vec<usize>)], f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>) -> Result<usize> {
    let leaves: Vec<_> = inputs.iter().map(|(d, s)| Tensor::variable(d.clone(), s)).collect();
    let grads = f(&leaves).backward();
    let mut checked = 0;
    for (w, (data, _)) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&leaves[w]);
        for i in 0..data.len() {
            let eval = |delta: f64| {
                let ts: Vec<_> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, (d, s))| {
                        let mut d = d.clone();
                        if j == w {
                            d[i] += delta;
                        }
                        Tensor::constant(d, s)
                    })
                    .collect();
                f(&ts).item()
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-3);
            ensure!(err < FD_TOL, "input {w}[{i}]: analytic {} numeric {numeric}", analytic[i]);
            checked += 1;
        }
    }
    Ok(checked)
}

/// Logits at least 0.05 from the hinge kinks at ±1.
fn away_from_kinks(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let x: f64 = rng.random_range(-3.0..3.0);
            if (x.abs() - 1.0).abs() > 0.05 {
                break x;
            }
        })
        .collect()
}

fn tiny_model(size: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        image_size: size,
        ch: 4,
        latent_dim: 8,
        num_classes: classes,
        embed_dim: 4,
        ..ModelConfig::default()
    }
}

fn images(rng: &mut Rng, n: usize, s: usize) -> Tensor<f64> {
    Tensor::constant((0..n * 3 * s * s).map(|_| rng.random_range(-1.0..1.0)).collect(), &[n, 3, s, s])
}

fn labels(n: usize, classes: usize) -> Option<Vec<usize>> {
    (classes > 0).then(|| (0..n).map(|i| i % classes).collect())
}

fn run_with_buffer_updates(store: &mut ParamStore<f64>, passes: usize, forward: &dyn Fn(&Ctx<'_, f64>)) {
    for _ in 0..passes {
        let ctx = Ctx::new(store, Mode::Train).updating_buffers(true);
        forward(&ctx);
        let updates = ctx.into_updates();
        store.apply_updates(updates);
    }
}

const ENTRIES_PER_TENSOR: usize = 48;

/// Central differences on every parameter tensor (all entries of small
/// tensors, 48 sampled entries of larger ones). Power-iteration vectors are
/// held fixed so the network is a fixed map; an entry whose 1e-3 stencil
/// straddles a ReLU kink is re-checked at step 1e-6 with the same tolerance.
fn fd_params(store: &ParamStore<f64>, loss: &dyn Fn(&Ctx<'_, f64>) -> Tensor<f64>) -> Result<(usize, usize)> {
    let ctx = Ctx::new(store, Mode::Train).trainable(true);
    let grads = ctx.param_grads(&loss(&ctx).backward());
    ensure!(grads.len() == store.params.len(), "not every parameter takes part in the loss");
    let mut rng = stream(99, 0);
    let (mut clean, mut kinks) = (0, 0);
    for (name, analytic) in &grads {
        let entries: Vec<usize> = if analytic.len() <= ENTRIES_PER_TENSOR {
            (0..analytic.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng, analytic.len(), ENTRIES_PER_TENSOR).into_vec()
        };
        for i in entries {
            let central = |h: f64| {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.param_mut(name).data[i] += delta;
                    loss(&Ctx::new(&s, Mode::Train)).item()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            };
            let rel = |n: f64| (n - analytic[i]).abs() / n.abs().max(analytic[i].abs()).max(1e-2);
            if rel(central(FD_STEP)) < FD_TOL {
                clean += 1;
                continue;
            }
            let fine = central(FD_KINK_STEP);
            ensure!(rel(fine) < FD_TOL, "{name}[{i}]: analytic {} numeric {fine}", analytic[i]);
            kinks += 1;
        }
    }
    ensure!(kinks <= clean, "{kinks} kink entries against {clean} clean ones");
    Ok((clean, kinks))
}

fn weights(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn ac3_gradients() -> Result<String> {
    let mut rng = stream(3, 0);
    let (n, h) = (2, 8);
    let ms = vec![n, 1, h, h];
    let masks: Vec<_> = (0..n).map(|_| sample_mask(h, h, &mut rng)).collect();
    let mut loss_entries = 0;
    for v in [NonSaturating, Hinge] {
        let enc = |rng: &mut Rng| (away_from_kinks(rng, n), vec![n]);
        let map = |rng: &mut Rng| (away_from_kinks(rng, n * h * h), ms.clone());
        loss_entries += fd_inputs(&[enc(&mut rng), enc(&mut rng)], &|t| enc_d_loss(&t[0], &t[1], v))?;
        loss_entries += fd_inputs(&[map(&mut rng), map(&mut rng)], &|t| dec_d_loss(&t[0], &t[1], v))?;
        loss_entries += fd_inputs(&[enc(&mut rng), map(&mut rng)], &|t| g_loss(&t[0], Some(&t[1]), v).0)?;
        loss_entries += fd_inputs(&[enc(&mut rng), map(&mut rng)], &|t| {
            let (e, d) = cutmix_supervision_loss(&t[0], &t[1], &masks, v).unwrap();
            e.add(&d)
        })?;
    }
    let pair = [(away_from_kinks(&mut rng, n), vec![n]), (away_from_kinks(&mut rng, n), vec![n])];
    loss_entries += fd_inputs(&pair, &|t| {
        let (d, g) = vanilla_losses(&t[0], &t[1]);
        d.add(&g)
    })?;
    let maps: Vec<_> = (0..3).map(|_| (away_from_kinks(&mut rng, n * h * h), ms.clone())).collect();
    loss_entries += fd_inputs(&maps, &|t| consistency_loss(&t[0], &t[1], &t[2], &masks).unwrap())?;

    let (mut clean, mut kinks) = (0, 0);
    for classes in [0, 3] {
        let cfg = tiny_model(8, classes);
        let d = UNetDiscriminator::new(&cfg);
        let mut ds = d.init::<f64>(&mut rng);
        let x = images(&mut rng, 2, 8);
        let y = labels(2, classes);
        run_with_buffer_updates(&mut ds, 100, &|ctx| {
            d.discriminate(ctx, &x, y.as_deref()).unwrap();
        });
        let (a, b) = (weights(&mut rng, 2), weights(&mut rng, 2 * 64));
        let (cl, k) = fd_params(&ds, &|ctx| {
            let s = d.discriminate(ctx, &x, y.as_deref()).unwrap();
            s.enc_logit
                .mul(&Tensor::constant(a.clone(), &[2]))
                .sum_all()
                .add(&s.dec_logits.mul(&Tensor::constant(b.clone(), &[2, 1, 8, 8])).sum_all())
        })?;
        clean += cl;
        kinks += k;

        let g = Generator::new(&cfg);
        let mut gs = g.init::<f64>(&mut rng);
        let mut lat = sample_latent::<f64>(&cfg, 3, &mut rng);
        lat.labels = labels(3, classes);
        run_with_buffer_updates(&mut gs, 100, &|ctx| {
            g.generate(ctx, &lat).unwrap();
        });
        let w = weights(&mut rng, 3 * 3 * 64);
        let (cl, k) = fd_params(&gs, &|ctx| {
            g.generate(ctx, &lat).unwrap().mul(&Tensor::constant(w.clone(), &[3, 3, 8, 8])).sum_all()
        })?;
        clean += cl;
        kinks += k;
    }
    Ok(format!(
        "{loss_entries} loss inputs; network parameters: {clean} entries at step {FD_STEP:e}, {kinks} at a ReLU kink checked at {FD_KINK_STEP:e}"
    ))
}

fn random_images(rng: &mut Rng, n: usize, s: usize) -> Tensor<f32> {
    Tensor::constant((0..n * 3 * s * s).map(|_| rng.random_range(-1.0f32..1.0)).collect(), &[n, 3, s, s])
}

fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn ac4_cutmix() -> Result<String> {
    let mut rng = stream(4, 0);
    let (x, g) = (random_images(&mut rng, 4, 16), random_images(&mut rng, 4, 16));
    let all_real = vec![CutMixMask::from_rect(16, 16, 0, 0, 0, 0); 4];
    let all_fake = vec![CutMixMask::from_rect(16, 16, 0, 16, 0, 16); 4];
    ensure!(bits_equal(mix(&x, &g, &all_real)?.data(), x.data()), "M = 1 does not give x");
    ensure!(bits_equal(mix(&x, &g, &all_fake)?.data(), g.data()), "M = 0 does not give g");
    for _ in 0..500 {
        let masks: Vec<_> = (0..4).map(|_| sample_mask(16, 16, &mut rng)).collect();
        let sum = mix(&x, &g, &masks)?.add(&mix(&g, &x, &masks)?);
        ensure!(bits_equal(sum.data(), x.add(&g).data()), "mix(x,g,M) + mix(g,x,M) != x + g");
    }
    for k in 0..10_000 {
        let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let m = sample_mask(h, w, &mut rng);
        let ones = m.bits().iter().filter(|&&b| b).count();
        ensure!(m.real_ratio() == ones as f64 / (h * w) as f64, "mask {k}: r differs from |M|/(WH)");
    }
    for warmup in [1, 4, 10] {
        for pmax in [0.3, 0.5, 1.0] {
            ensure!(pmix_schedule(0.0, warmup, pmax) == 0.0, "p_mix at epoch 0");
            ensure!(pmix_schedule(warmup as f64, warmup, pmax) == pmax, "p_mix at epoch {warmup}");
        }
    }
    let (a, b) = (random_images(&mut rng, 3, 8), random_images(&mut rng, 3, 8));
    match build_cutmix_batch(&a, &b, Some(&[0, 1, 2]), Some(&[0, 1, 1]), &mut rng) {
        Err(Error::ClassMismatch(_)) => {}
        other => bail!("cross-class pair accepted: {:?}", other.map(|b| b.len())),
    }
    build_cutmix_batch(&a, &b, Some(&[0, 1, 2]), Some(&[0, 1, 2]), &mut rng)?;
    Ok("identities and complementarity bit-exact; r exact on 10000 masks; schedule endpoints exact; cross-class pairs rejected".into())
}

fn ac5_consistency() -> Result<String> {
    let mut rng = stream(5, 0);
    let (n, h) = (3, 8);
    let s = [n, 1, h, h];
    let masks: Vec<_> = (0..n).map(|_| sample_mask(h, h, &mut rng)).collect();
    let same = logits(&mut rng, n * h * h, 3.0);
    let v = consistency_loss(&c(&same, &s), &c(&same, &s), &c(&same, &s), &masks)?.item();
    close(v, 0.0, EXACT, "equal maps")?;
    // A constant discriminator outputs the same map for every input.
    let k = vec![-1.3; n * h * h];
    let v = consistency_loss(&c(&k, &s), &c(&k, &s), &c(&k, &s), &masks)?.item();
    close(v, 0.0, EXACT, "constant discriminator")?;
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let (n, h) = (1 + case % 4, [2, 4, 8][case % 3]);
        let masks: Vec<_> = (0..n).map(|_| sample_mask(h, h, &mut rng)).collect();
        let scale = [0.1, 2.0, 30.0][case % 3];
        let (m, r, f) = (
            logits(&mut rng, n * h * h, scale),
            logits(&mut rng, n * h * h, scale),
            logits(&mut rng, n * h * h, scale),
        );
        let s = [n, 1, h, h];
        let got = consistency_loss(&c(&m, &s), &c(&r, &s), &c(&f, &s), &masks)?.item();
        ensure!(got >= 0.0, "case {case}: negative consistency {got}");
        let want = oracle_consistency(&m, &r, &f, &masks);
        close(got, want, EXACT, "scalar oracle")?;
        worst = worst.max((got - want).abs());
    }
    Ok(format!("zero cases exact; 1000 cases nonnegative, max oracle deviation {worst:.1e}"))
}

fn gaussian(mu: Vec<f64>, sigma: &DMatrix<f64>) -> Result<FeatureGaussian> {
    let d = mu.len();
    let flat: Vec<f64> = (0..d * d).map(|k| sigma[(k / d, k % d)]).collect();
    Ok(FeatureGaussian::new(mu, flat, 1000)?)
}

fn random_spd(rng: &mut Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn ac6_frechet_is() -> Result<String> {
    let mut rng = stream(6, 0);
    for d in [1, 4, 16] {
        let mu: Vec<f64> = logits(&mut rng, d, 2.0);
        let s = random_spd(&mut rng, d);
        let a = gaussian(mu.clone(), &s)?;
        close(frechet_distance(&a, &a)?, 0.0, 1e-8, "identical Gaussians")?;
    }
    let one = |m: f64, v: f64| gaussian(vec![m], &DMatrix::from_element(1, 1, v));
    close(frechet_distance(&one(0.0, 1.0)?, &one(1.0, 1.0)?)?, 1.0, 1e-8, "1-D unit shift")?;
    close(frechet_distance(&one(0.5, 4.0)?, &one(-1.0, 1.0)?)?, 2.25 + 1.0, 1e-8, "1-D variances 4 and 1")?;
    for _ in 0..20 {
        let d = rng.random_range(1..12);
        let (m1, m2) = (logits(&mut rng, d, 3.0), logits(&mut rng, d, 3.0));
        let s1: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..5.0)).collect();
        let s2: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..5.0)).collect();
        let want: f64 = (0..d)
            .map(|i| (m1[i] - m2[i]).powi(2) + s1[i] + s2[i] - 2.0 * (s1[i] * s2[i]).sqrt())
            .sum();
        let a = gaussian(m1, &DMatrix::from_diagonal(&s1.into()))?;
        let b = gaussian(m2, &DMatrix::from_diagonal(&s2.into()))?;
        close(frechet_distance(&a, &b)?, want, 1e-8, "diagonal closed form")?;
    }
    for _ in 0..20 {
        let d = rng.random_range(2..10);
        let q = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let (m1, m2) = (logits(&mut rng, d, 2.0), logits(&mut rng, d, 2.0));
        let (s1, s2) = (random_spd(&mut rng, d), random_spd(&mut rng, d));
        let base = frechet_distance(&gaussian(m1.clone(), &s1)?, &gaussian(m2.clone(), &s2)?)?;
        let rot = |m: &[f64]| (&q * DMatrix::from_column_slice(d, 1, m)).as_slice().to_vec();
        let rotated = frechet_distance(
            &gaussian(rot(&m1), &(&q * &s1 * q.transpose()))?,
            &gaussian(rot(&m2), &(&q * &s2 * q.transpose()))?,
        )?;
        close(rotated, base, 1e-6, "rotation invariance")?;
    }
    for k in [2, 5, 10] {
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let probs: Vec<f64> = (0..n)
                .flat_map(|_| {
                    let e: Vec<f64> = (0..k).map(|_| rng.random_range(0.0f64..6.0).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(move |v| v / s)
                })
                .collect();
            let is = inception_style_score(&probs, k)?;
            ensure!((1.0 - 1e-12..=k as f64 + 1e-12).contains(&is), "IS {is} outside [1, {k}]");
        }
        let one_hot: Vec<f64> = (0..k).flat_map(|i| (0..k).map(move |j| f64::from(u8::from(i == j)))).collect();
        close(inception_style_score(&one_hot, k)?, k as f64, 1e-10, "one-hot IS")?;
    }
    Ok("zero, 1-D, diagonal and rotation checks within tolerance; IS in [1, K], one-hot = K".into())
}

fn top_singular_value(w: &[f64], rows: usize) -> f64 {
    DMatrix::from_row_slice(rows, w.len() / rows, w).singular_values().max()
}

fn ac7_architecture() -> Result<String> {
    let mut rng = stream(7, 0);
    for size in [16, 32, 64] {
        for classes in [0, 3] {
            let cfg = tiny_model(size, classes);
            let (g, d) = (Generator::new(&cfg), UNetDiscriminator::new(&cfg));
            let (gs, ds) = (g.init::<f64>(&mut rng), d.init::<f64>(&mut rng));
            let mut lat = sample_latent::<f64>(&cfg, 2, &mut rng);
            lat.labels = labels(2, classes);
            let x = g.generate(&Ctx::new(&gs, Mode::Train), &lat)?;
            ensure!(x.shape() == [2, 3, size, size], "generator output {:?}", x.shape());
            let s = d.discriminate(&Ctx::new(&ds, Mode::Train), &x, lat.labels.as_deref())?;
            ensure!(s.enc_logit.shape() == [2], "encoder output {:?}", s.enc_logit.shape());
            ensure!(s.dec_logits.shape() == [2, 1, size, size], "decoder output {:?}", s.dec_logits.shape());
        }
    }

    let mut decoder_tensors = 0;
    for classes in [0, 3] {
        let cfg = tiny_model(16, classes);
        let d = UNetDiscriminator::new(&cfg);
        let ds = d.init::<f64>(&mut rng);
        let x = images(&mut rng, 3, 16);
        let y = labels(3, classes);
        let ctx = Ctx::new(&ds, Mode::Train).trainable(true);
        let s = d.discriminate(&ctx, &x, y.as_deref())?;
        for (name, g) in ctx.param_grads(&s.enc_logit.sum_all().backward()) {
            if UNetDiscriminator::is_decoder_param(&name) {
                ensure!(g.iter().all(|&v| v == 0.0), "{name} receives encoder-head gradient");
                decoder_tensors += 1;
            }
        }
    }
    ensure!(decoder_tensors > 0, "no decoder parameters found");

    let cfg = tiny_model(32, 0);
    let d = UNetDiscriminator::new(&cfg);
    let ds = d.init::<f64>(&mut rng);
    let x = images(&mut rng, 2, 32);
    let wired = d.discriminate_with(&Ctx::new(&ds, Mode::Train), &x, None, Skips::Wired)?;
    let zeroed = d.discriminate_with(&Ctx::new(&ds, Mode::Train), &x, None, Skips::Zeroed)?;
    let change: f64 = wired.dec_logits.data().iter().zip(zeroed.dec_logits.data()).map(|(a, b)| (a - b).abs()).sum();
    ensure!(change > 1e-6, "skip ablation leaves the decoder output unchanged");
    ensure!(wired.enc_logit.data() == zeroed.enc_logit.data(), "skip ablation changed the encoder output");

    let cfg = tiny_model(16, 3);
    let (g, d) = (Generator::new(&cfg), UNetDiscriminator::new(&cfg));
    let (mut gs, mut ds) = (g.init::<f64>(&mut rng), d.init::<f64>(&mut rng));
    let x = images(&mut rng, 2, 16);
    let lat = sample_latent::<f64>(&cfg, 2, &mut rng);
    run_with_buffer_updates(&mut ds, 300, &|ctx| {
        d.discriminate(ctx, &x, Some(&[0, 2])).unwrap();
    });
    run_with_buffer_updates(&mut gs, 300, &|ctx| {
        g.generate(ctx, &lat).unwrap();
    });
    let mut worst: f64 = 0.0;
    let mut layers = 0;
    for store in [&ds, &gs] {
        let ctx = Ctx::new(store, Mode::Train);
        for name in store.params.keys().filter(|k| store.buffers.contains_key(&format!("{k}.sn_u"))) {
            let sigma = top_singular_value(ctx.spectral_normalized(name).data(), store.param(name).shape[0]);
            ensure!(sigma <= 1.0 + 1e-3, "{name}: top singular value {sigma}");
            worst = worst.max(sigma);
            layers += 1;
        }
    }
    Ok(format!(
        "shapes at 16/32/64; {decoder_tensors} decoder tensors with zero encoder-head gradient; skips matter; {layers} normalized layers, max sigma {worst:.6}"
    ))
}

fn determinism_config(classes: usize) -> Result<Config> {
    let mut c = Config::default();
    c.model.image_size = 16;
    c.model.ch = 4;
    c.model.latent_dim = 8;
    c.model.num_classes = classes;
    c.model.embed_dim = 4;
    c.train.batch_size = 4;
    c.train.pmix_max = 1.0;
    c.train.pmix_warmup_epochs = 1;
    c.train.total_iterations = 10;
    c.data.synth_samples = 24;
    Ok(c.validate()?)
}

fn train_steps(trainer: &Trainer<'_>, data: &Dataset, st: &mut TrainState, n: u64) -> Result<usize> {
    let t = &trainer.config().train;
    let mut cutmix = 0;
    for _ in 0..n {
        let batch = batch_for_iteration(data, t.batch_size, t.seed, st.iteration)?;
        cutmix += trainer.train_step(st, &batch)?.cutmix as usize;
    }
    Ok(cutmix)
}

fn ac8_determinism() -> Result<String> {
    let dir = artifacts("ac8");
    let mut cutmix_steps = 0;
    for classes in [0, 3] {
        let cfg = determinism_config(classes)?;
        let data = dataset_from_config(&cfg)?;
        let trainer = Trainer::new(cfg, &data)?;
        let (mut a, mut b) = (trainer.init_state(), trainer.init_state());
        cutmix_steps += train_steps(&trainer, &data, &mut a, 10)?;
        train_steps(&trainer, &data, &mut b, 10)?;
        ensure!(
            checkpoint::to_bytes(&a)? == checkpoint::to_bytes(&b)?,
            "two seeded runs differ (classes {classes})"
        );

        let mut first = trainer.init_state();
        train_steps(&trainer, &data, &mut first, 5)?;
        let path = dir.join(format!("half_{classes}.ckpt"));
        checkpoint::save(&first, &path)?;
        drop(first);
        let mut resumed = checkpoint::load(&path)?;
        train_steps(&trainer, &data, &mut resumed, 5)?;
        ensure!(
            checkpoint::to_bytes(&resumed)? == checkpoint::to_bytes(&a)?,
            "resumed run differs from the uninterrupted one (classes {classes})"
        );
    }
    ensure!(cutmix_steps > 0, "no CutMix step exercised");
    Ok(format!("10-step runs bit-identical and 5+5 resume bit-identical, unconditional and conditional ({cutmix_steps} CutMix steps)"))
}

/// Required relative drop in proxy-FID from iteration 0 to the end of the
/// run. Frozen.
const AC9_MIN_DROP: f64 = 0.30;

fn ac9_training_smoke() -> Result<String> {
    let out = artifacts("ac9");
    let mut cfg = Config::default();
    cfg.model.image_size = 32;
    cfg.model.ch = 16;
    cfg.model.num_classes = 0;
    cfg.data.synth_samples = 2000;
    cfg.train.total_iterations = 2000;
    let cfg = cfg.validate()?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    let data = dataset_from_config(&cfg)?;
    let mut trainer = Trainer::new(cfg, &data)?;
    let mut st = trainer.init_state();
    let layout = RunLayout::create(&out)?;
    let summary = trainer.run(&mut st, Some(&layout))?;
    let (Some(first), Some(last)) = (summary.evaluations.first(), summary.evaluations.last()) else {
        bail!("no evaluations recorded");
    };
    ensure!(first.0 == 0 && last.0 == 2000, "evaluations at {} and {}", first.0, last.0);
    let curve: Vec<String> = summary.evaluations.iter().map(|e| format!("{}:{:.4}", e.0, e.1)).collect();
    let drop = 1.0 - last.1 / first.1;
    ensure!(
        drop >= AC9_MIN_DROP,
        "proxy-FID fell {:.1}% (need {:.0}%): {}",
        drop * 100.0,
        AC9_MIN_DROP * 100.0,
        curve.join(" ")
    );
    Ok(format!(
        "proxy-FID {:.4} -> {:.4} ({:.1}% lower, need {:.0}%); curve {}",
        first.1,
        last.1,
        drop * 100.0,
        AC9_MIN_DROP * 100.0,
        curve.join(" ")
    ))
}

fn ac10_ablation() -> Result<String> {
    let out = artifacts("ac10");
    // Reduced resolution and width keep the three 1000-iteration rows short;
    // only completion and the table schema are checked.
    let o = Command::new(env!("CARGO_BIN_EXE_unetgan"))
        .args(["ablate", "--out", out.to_str().unwrap(), "--iterations", "1000"])
        .args(["--set", "model.image_size=16", "--set", "model.ch=8", "--set", "eval.fid_samples=256"])
        .env("RUST_LOG", "warn")
        .output()?;
    ensure!(o.status.success(), "ablate exited with {}: {}", o.status, String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join(unetgan_cli::ablate::TABLE_FILE))?;
    let lines: Vec<&str> = table.lines().collect();
    ensure!(lines.len() == 5, "expected header, rule and 3 rows, got {} lines", lines.len());
    ensure!(lines[0] == "| config | proxy-FID | IS-proxy | iterations |", "header {}", lines[0]);
    let names = ["encoder-only discriminator", "+ u-net decoder head", "+ cutmix + consistency"];
    let mut summary = Vec::new();
    for (line, name) in lines[2..].iter().zip(names) {
        let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        ensure!(cells.len() == 4 && cells[0] == name, "row {line}");
        let fid: f64 = cells[1].parse()?;
        let is: f64 = cells[2].parse()?;
        ensure!(fid.is_finite() && fid >= 0.0 && is >= 1.0, "row {line}");
        ensure!(cells[3] == "1000", "row {line}");
        summary.push(format!("{name}: {fid:.3}"));
    }
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(out.join(unetgan_cli::ablate::JSON_FILE))?)?;
    ensure!(rows.len() == 3 && rows.iter().all(|r| r["failure"].is_null()), "JSON rows incomplete");
    Ok(format!("3 rows x 1000 iterations; {}", summary.join("; ")))
}
