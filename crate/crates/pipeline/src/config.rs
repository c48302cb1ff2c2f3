//! Training configuration, read from JSON with every field optional.

use std::path::Path;

use mscgm_nn::{DiscriminatorConfig, EpsUnetConfig, GeneratorConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::Degradation;
use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconLoss {
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Square patch side; `None` uses whole images.
    pub patch: Option<usize>,
    /// 1 takes the centre crop; more draws seeded random crops.
    pub patches_per_image: usize,
    /// Applied to each conditional image after loading.
    pub degradations: Vec<Degradation>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            patch: None,
            patches_per_image: 1,
            degradations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub attention: bool,
    pub attention_heads: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            levels: 2,
            attention: false,
            attention_heads: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbdpConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub unet: UnetConfig,
}

impl Default for BbdpConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            unet: UnetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub levels: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            base_channels: 32,
            levels: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    pub blocks: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            base_channels: 16,
            blocks: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub lambda_recon: f64,
    pub recon_loss: ReconLoss,
    pub nu_ssim: f64,
    pub alpha_adv: f64,
    pub gp_weight: f64,
    /// One generator/critic pair for all scales (scale fed as a constant
    /// input channel) rather than one per scale.
    pub shared_generator: bool,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr_generator: 1e-4,
            lr_discriminator: 1e-5,
            critic_steps: 1,
            lambda_recon: 20.0,
            recon_loss: ReconLoss::L1,
            nu_ssim: 0.5,
            alpha_adv: 0.1,
            gp_weight: 10.0,
            shared_generator: true,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Wavelet levels `S`.
    pub levels: usize,
    /// Diffusion steps `T`.
    pub timesteps: usize,
    pub ema_rate: f64,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    pub data: DataConfig,
    pub bbdp: BbdpConfig,
    pub gan: GanConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            timesteps: 1000,
            ema_rate: 0.999,
            seed: 0,
            checkpoint_every: 0,
            data: DataConfig::default(),
            bbdp: BbdpConfig::default(),
            gan: GanConfig::default(),
        }
    }
}

fn bad(msg: String) -> PipelineError {
    PipelineError::Config(msg)
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::file(path, e))?;
        Self::from_json(&text).map_err(|e| PipelineError::file(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(compact.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(bad("levels must be at least 1".into()));
        }
        if self.timesteps < 2 {
            return Err(bad(format!("timesteps must be at least 2, got {}", self.timesteps)));
        }
        if !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(bad(format!("ema_rate must lie in [0, 1], got {}", self.ema_rate)));
        }
        let g = &self.gan;
        for (name, w) in [
            ("lambda_recon", g.lambda_recon),
            ("nu_ssim", g.nu_ssim),
            ("alpha_adv", g.alpha_adv),
            ("gp_weight", g.gp_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(bad(format!("loss weight {name} must be non-negative, got {w}")));
            }
        }
        if g.critic_steps == 0 {
            return Err(bad("critic_steps must be at least 1".into()));
        }
        if self.bbdp.batch_size == 0 || g.batch_size == 0 {
            return Err(bad("batch sizes must be positive".into()));
        }
        if let Some(p) = self.data.patch {
            let f = 1usize << self.levels;
            if p == 0 || p % f != 0 {
                return Err(bad(format!("patch {p} must be a positive multiple of 2^{} = {f}", self.levels)));
            }
        }
        if self.data.patches_per_image == 0 {
            return Err(bad("patches_per_image must be positive".into()));
        }
        for d in &self.data.degradations {
            d.validate()?;
        }
        Ok(())
    }

    pub fn eps_unet(&self, channels: usize, height: usize, width: usize) -> EpsUnetConfig {
        let u = &self.bbdp.unet;
        EpsUnetConfig {
            base_channels: u.base_channels,
            levels: u.levels,
            attention: u.attention,
            attention_heads: u.attention_heads,
            ..EpsUnetConfig::desk(channels, height, width)
        }
    }

    pub fn generator(&self, channels: usize, height: usize, width: usize) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.gan.generator.base_channels,
            levels: self.gan.generator.levels,
            ..GeneratorConfig::desk(channels, height, width)
        }
    }

    pub fn discriminator(&self, channels: usize, height: usize, width: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.gan.discriminator.base_channels,
            blocks: self.gan.discriminator.blocks,
            ..DiscriminatorConfig::desk(channels, height, width)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.levels, c.timesteps), (2, 1000));
        assert_eq!(c.gan.lambda_recon, 20.0);
        assert_eq!(c.gan.nu_ssim, 0.5);
        assert_eq!(c.gan.alpha_adv, 0.1);
        assert_eq!((c.gan.lr_generator, c.gan.lr_discriminator), (1e-4, 1e-5));
        assert_eq!(c.ema_rate, 0.999);
        assert_eq!(c.gan.gp_weight, 10.0);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_and_unknown_fields() {
        let c = TrainConfig::from_json(r#"{"levels": 3, "gan": {"recon_loss": "l2"}}"#).unwrap();
        assert_eq!(c.levels, 3);
        assert_eq!(c.gan.recon_loss, ReconLoss::L2);
        assert_eq!(c.timesteps, 1000);
        assert!(TrainConfig::from_json(r#"{"level": 3}"#).is_err());
        let round = TrainConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.gan.critic_steps = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.gan.alpha_adv = -0.1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.levels = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.data.patch = Some(6);
        assert!(c.validate().is_err());
    }
}
