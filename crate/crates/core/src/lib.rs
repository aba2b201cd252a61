//! U-Net discriminator GAN with per-pixel feedback and CutMix consistency
//! regularization, sized for CPU training.

pub mod config;
pub mod cutmix;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use config::Config;
pub use error::{Error, Result};
pub use unetgan_autograd as autograd;
