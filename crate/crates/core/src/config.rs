//! Run configuration: model shapes, loss variants, schedules and training
//! hyperparameters, loaded from a single TOML file with one section per area.
//!
//! ```toml
//! [model]
//! image_size = 32
//! ch = 16
//!
//! [loss]
//! adversarial_variant = "non_saturating"
//!
//! [train]
//! total_iterations = 2000
//! ```
//!
//! Missing keys take the desk-scale defaults below. Unknown keys are errors.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDistribution {
    UniformPm1,
    StandardNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialVariant {
    NonSaturating,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Base channel multiplier.
    pub ch: usize,
    pub latent_dim: usize,
    /// 0 means unconditional.
    pub num_classes: usize,
    /// Width of the shared class embedding fed to the generator's norms.
    pub embed_dim: usize,
    pub use_spectral_norm: bool,
    pub latent_distribution: LatentDistribution,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            ch: 16,
            latent_dim: 64,
            num_classes: 0,
            embed_dim: 32,
            use_spectral_norm: true,
            latent_distribution: LatentDistribution::UniformPm1,
        }
    }
}

impl ModelConfig {
    pub fn is_conditional(&self) -> bool {
        self.num_classes > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub adversarial_variant: AdversarialVariant,
    pub lambda_consistency: f64,
    pub use_decoder_head: bool,
    pub use_cutmix: bool,
    pub use_consistency: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            adversarial_variant: AdversarialVariant::NonSaturating,
            lambda_consistency: 1.0,
            use_decoder_head: true,
            use_cutmix: true,
            use_consistency: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub total_iterations: usize,
    pub ema_decay: f64,
    pub pmix_max: f64,
    pub pmix_warmup_epochs: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_g: 1e-4,
            lr_d: 5e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            total_iterations: 2000,
            ema_decay: 0.99,
            pmix_max: 0.5,
            pmix_warmup_epochs: 4,
            d_steps: 1,
            seed: 0,
            eval_every: 500,
            checkpoint_every: 1000,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Image folder root when `source = "folder"`.
    pub path: Option<String>,
    pub synth_samples: usize,
    pub synth_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            path: None,
            synth_samples: 2000,
            synth_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples per side for proxy-FID and IS.
    pub fid_samples: usize,
    pub batch_size: usize,
    /// Batches used to re-estimate generator batch-norm statistics.
    pub standing_stats_batches: usize,
    pub heatmap_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fid_samples: 512,
            batch_size: 64,
            standing_stats_batches: 8,
            heatmap_samples: 8,
            seed: 1234,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Number of 2× downsampling stages from `image_size` to the 4×4 bottleneck.
pub fn num_resolution_stages(image_size: usize) -> Result<usize> {
    if image_size < 16 || !image_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "image_size {image_size} must be a power of two >= 16"
        )));
    }
    Ok(stages_unchecked(image_size))
}

/// Same as [`num_resolution_stages`] but also admits 8 px, which the
/// networks support for tiny gradient-check instances.
pub(crate) fn stages_unchecked(image_size: usize) -> usize {
    assert!(
        image_size >= 8 && image_size.is_power_of_two(),
        "image_size {image_size} must be a power of two >= 8"
    );
    image_size.trailing_zeros() as usize - 2
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("config not found: {}", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical text form; embedded in checkpoints and metrics.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Applies a `section.key=value` override. The value is parsed as a TOML
    /// literal, falling back to a bare string. Integers keep the full `u64`
    /// range so any seed can be set.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = match raw.parse::<u64>() {
            Ok(n) => serde_json::Value::from(n),
            Err(_) => toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .and_then(|v| serde_json::to_value(v).ok())
                .unwrap_or_else(|| serde_json::Value::String(raw.to_string())),
        };

        let mut root = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("override key `{key}` is not a table path")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config section `{part}`")))?;
        }
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    /// Returns every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bad = |field: &'static str, message: &str| {
            v.push(Violation {
                field,
                message: message.to_string(),
            })
        };
        let m = &self.model;
        if !m.image_size.is_power_of_two() {
            bad("model.image_size", "image_size not power of two");
        }
        if m.image_size < 16 {
            bad("model.image_size", "image_size must be at least 16");
        }
        if m.channels == 0 {
            bad("model.channels", "channels must be at least 1");
        }
        if m.ch == 0 {
            bad("model.ch", "ch must be at least 1");
        }
        if m.latent_dim == 0 {
            bad("model.latent_dim", "latent_dim must be at least 1");
        }
        if m.is_conditional() && m.embed_dim == 0 {
            bad("model.embed_dim", "conditional models need embed_dim >= 1");
        }

        let l = &self.loss;
        if l.use_consistency && !l.use_cutmix {
            bad("loss.use_consistency", "consistency requires cutmix");
        }
        if l.use_consistency && !l.use_decoder_head {
            bad("loss.use_consistency", "consistency requires decoder head");
        }
        if !(l.lambda_consistency.is_finite() && l.lambda_consistency >= 0.0) {
            bad("loss.lambda_consistency", "lambda must be a nonnegative real");
        }

        let t = &self.train;
        if t.batch_size == 0 {
            bad("train.batch_size", "batch_size must be at least 1");
        }
        if !(t.lr_g > 0.0 && t.lr_g.is_finite()) {
            bad("train.lr_g", "learning rate must be strictly positive");
        }
        if !(t.lr_d > 0.0 && t.lr_d.is_finite()) {
            bad("train.lr_d", "learning rate must be strictly positive");
        }
        if !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) {
            bad("train.adam_beta", "Adam betas must lie in [0, 1)");
        }
        if !(t.adam_eps > 0.0) {
            bad("train.adam_eps", "adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&t.ema_decay) {
            bad("train.ema_decay", "ema_decay must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&t.pmix_max) {
            bad("train.pmix_max", "pmix_max must lie in [0, 1]");
        }
        if t.pmix_warmup_epochs == 0 {
            bad("train.pmix_warmup_epochs", "pmix_warmup_epochs must be at least 1");
        }
        if t.d_steps == 0 {
            bad("train.d_steps", "d_steps must be at least 1");
        }
        if t.eval_every == 0 || t.checkpoint_every == 0 || t.log_every == 0 {
            bad("train", "eval_every, checkpoint_every and log_every must be at least 1");
        }

        let d = &self.data;
        match d.source {
            DataSource::Folder if d.path.is_none() => {
                bad("data.path", "folder source requires a path")
            }
            DataSource::Synth => {
                if m.num_classes == 1 || m.num_classes > 10 {
                    bad("model.num_classes", "synthetic data supports 0 or 2..=10 classes");
                }
                if d.synth_samples < t.batch_size {
                    bad("data.synth_samples", "dataset smaller than one batch");
                }
            }
            _ => {}
        }

        let e = &self.eval;
        if e.fid_samples < 2 || e.batch_size == 0 || e.standing_stats_batches == 0 {
            bad("eval", "fid_samples >= 2, batch_size >= 1 and standing_stats_batches >= 1 required");
        }
        v
    }

    /// Returns the config unchanged iff all invariants hold.
    pub fn validate(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invalid(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn messages(cfg: Config) -> Vec<String> {
        match cfg.validate() {
            Err(Error::Invalid(v)) => v.into_iter().map(|v| v.message).collect(),
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn defaults_validate() {
        let mut c = Config::default();
        c.model.image_size = 32;
        c.model.ch = 16;
        c.model.num_classes = 0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut c = Config::default();
        c.model.image_size = 48;
        assert!(messages(c).contains(&"image_size not power of two".to_string()));
    }

    #[test]
    fn rejects_consistency_without_cutmix() {
        let mut c = Config::default();
        c.loss.use_cutmix = false;
        assert_eq!(messages(c), vec!["consistency requires cutmix".to_string()]);
    }

    #[test]
    fn reports_every_violation() {
        let mut c = Config::default();
        c.model.image_size = 48;
        c.model.ch = 0;
        c.train.lr_g = 0.0;
        c.train.pmix_max = 1.5;
        c.loss.use_decoder_head = false;
        assert_eq!(messages(c).len(), 5);
    }

    #[test]
    fn stage_counts() {
        assert_eq!(num_resolution_stages(256).unwrap(), 6);
        assert_eq!(num_resolution_stages(32).unwrap(), 3);
        assert_eq!(num_resolution_stages(16).unwrap(), 2);
        assert!(num_resolution_stages(8).is_err());
        assert!(num_resolution_stages(48).is_err());
        for s in [16usize, 32, 64, 128, 256, 512] {
            assert_eq!(num_resolution_stages(2 * s).unwrap(), num_resolution_stages(s).unwrap() + 1);
        }
    }

    #[test]
    fn toml_roundtrip_and_override() {
        let mut c = Config::default();
        c.apply_override("train.total_iterations=5").unwrap();
        c.apply_override("loss.adversarial_variant=hinge").unwrap();
        c.apply_override("train.lr_g = 2e-4").unwrap();
        assert_eq!(c.train.total_iterations, 5);
        assert_eq!(c.loss.adversarial_variant, AdversarialVariant::Hinge);
        assert_eq!(c.train.lr_g, 2e-4);
        let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert!(c.apply_override("nosuch.key=1").is_err());
        assert!(c.apply_override("train.not_a_field=1").is_err());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = Config::from_toml_str("[model]\nimage_size = 64\n").unwrap();
        assert_eq!(c.model.image_size, 64);
        assert_eq!(c.train, TrainConfig::default());
    }
}
