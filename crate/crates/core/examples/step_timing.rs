//! Times training iterations and one evaluation on the synthetic dataset.
//!
//! `cargo run --release -p unetgan-core --example step_timing -- [batch] [iters] [ch]`

use std::time::Instant;

use unetgan_core::data::{batch_for_iteration, synth_shapes_dataset};
use unetgan_core::trainer::Trainer;
use unetgan_core::Config;

fn main() -> unetgan_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let batch = args.first().copied().unwrap_or(16);
    let iters = args.get(1).copied().unwrap_or(10) as u64;
    let mut cfg = Config::default();
    cfg.train.batch_size = batch;
    if let Some(&ch) = args.get(2) {
        cfg.model.ch = ch;
    }
    let data = synth_shapes_dataset(cfg.data.synth_samples, cfg.model.image_size, 3, 0, cfg.data.synth_seed)?;
    let mut trainer = Trainer::new(cfg.clone(), &data)?;
    let mut st = trainer.init_state();
    let t0 = Instant::now();
    for it in 0..iters {
        let b = batch_for_iteration(&data, batch, 0, it)?;
        let r = trainer.train_step(&mut st, &b)?;
        if it == 0 {
            println!("first step: D {:.4} G {:.4}", r.d.total, r.g.total);
        }
    }
    let per = t0.elapsed().as_secs_f64() / iters as f64;
    println!("batch {batch}: {per:.3} s/iteration");
    let t1 = Instant::now();
    let rep = trainer.evaluate(&st)?;
    println!("evaluation: {:.2} s (fid {:.3}, is {:.3})", t1.elapsed().as_secs_f64(), rep.fid, rep.is);
    Ok(())
}
