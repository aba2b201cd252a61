//! Trains on the synthetic dataset without writing files and prints the
//! evaluation history. Arguments are `section.key=value` overrides.

use unetgan_core::data::synth_shapes_dataset;
use unetgan_core::trainer::Trainer;
use unetgan_core::Config;

fn main() -> unetgan_core::Result<()> {
    env_logger::init();
    let mut cfg = Config::default();
    for a in std::env::args().skip(1) {
        cfg.apply_override(&a)?;
    }
    let m = &cfg.model;
    let data = synth_shapes_dataset(cfg.data.synth_samples, m.image_size, m.channels, m.num_classes, cfg.data.synth_seed)?;
    let mut trainer = Trainer::new(cfg, &data)?;
    let mut st = trainer.init_state();
    let summary = trainer.run(&mut st, None)?;
    for (it, fid, is) in &summary.evaluations {
        println!("{it:>6}  fid {fid:>9.4}  is {is:.4}");
    }
    println!("wall time {:.0} s", summary.wall_time);
    Ok(())
}
