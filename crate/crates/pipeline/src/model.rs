//! Trained model bundles and their checkpoint metadata.

use mscgm_core::{Rng, Tensor};
use mscgm_nn::{build_discriminator, build_eps_unet, build_generator, Graph, Network};
use serde::{Deserialize, Serialize};

use crate::bands::{from_nchw, to_nchw};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub step: u64,
    pub config_hash: String,
    pub channels: usize,
    /// Training image extents.
    pub height: usize,
    pub width: usize,
    pub config: TrainConfig,
}

impl CheckpointMeta {
    pub fn parse(ckpt: &Checkpoint) -> Result<Self> {
        serde_json::from_str(&ckpt.metadata)
            .map_err(|e| PipelineError::Config(format!("checkpoint metadata: {e}")))
    }
}

/// The ε-predictor trained on the coarsest low band.
pub struct BbdpModel {
    pub net: Network<f32>,
    pub config: TrainConfig,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl BbdpModel {
    pub fn new(config: TrainConfig, channels: usize, height: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let f = 1usize << config.levels;
        let arch = config.eps_unet(channels, height / f, width / f);
        let net = build_eps_unet(&arch, rng)?;
        Ok(Self {
            net,
            config,
            channels,
            height,
            width,
        })
    }

    /// The network specialized to a coarse band of `h × w`.
    pub fn graph_for(&self, h: usize, w: usize) -> Result<Graph> {
        Ok(self.config.eps_unet(self.channels, h, w).graph()?)
    }

    /// EMA prediction of the bridge target for one HWC band.
    pub fn predict(&self, graph: &Graph, x_t: &Tensor<f32>, y: &Tensor<f32>, t_norm: f64) -> Result<Tensor<f32>> {
        let inputs = [
            to_nchw(&[x_t])?,
            to_nchw(&[y])?,
            Tensor::new(&[1, 1], vec![t_norm as f32])?,
        ];
        let out = self.net.forward_eval_on(graph, &inputs, true)?;
        Ok(from_nchw(&out, 0)?)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            kind: "bbdp".into(),
            step: self.net.step(),
            config_hash: self.config.hash(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            config: self.config.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_string(&self.meta()).expect("metadata serializes");
        let mut c = Checkpoint::new(meta);
        c.push_network("eps", &self.net);
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = CheckpointMeta::parse(ckpt)?;
        if meta.kind != "bbdp" {
            return Err(PipelineError::Config(format!(
                "expected a bbdp checkpoint, found kind '{}'",
                meta.kind
            )));
        }
        let mut model = Self::new(meta.config, meta.channels, meta.height, meta.width, &mut Rng::new(0))?;
        ckpt.restore_network("eps", &mut model.net)?;
        Ok(model)
    }
}

/// Subband generators and critics, one shared pair or one per scale.
pub struct GanModel {
    pub generators: Vec<Network<f32>>,
    pub discriminators: Vec<Network<f32>>,
    pub config: TrainConfig,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl GanModel {
    pub fn new(config: TrainConfig, channels: usize, height: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let count = if config.gan.shared_generator { 1 } else { config.levels };
        let mut generators = Vec::with_capacity(count);
        let mut discriminators = Vec::with_capacity(count);
        for i in 0..count {
            // Shared networks are built at the finest detail resolution;
            // per-scale ones at their own.
            let k = if config.gan.shared_generator { 1 } else { i + 1 };
            let (h, w) = (height >> k, width >> k);
            generators.push(build_generator(&config.generator(channels, h, w), rng)?);
            discriminators.push(build_discriminator(&config.discriminator(channels, h, w), rng)?);
        }
        Ok(Self {
            generators,
            discriminators,
            config,
            channels,
            height,
            width,
        })
    }

    /// Index of the networks serving scale `k`.
    pub fn slot(&self, k: usize) -> usize {
        if self.generators.len() == 1 {
            0
        } else {
            k - 1
        }
    }

    pub fn generator_graph(&self, h: usize, w: usize) -> Result<Graph> {
        Ok(self.config.generator(self.channels, h, w).graph()?)
    }

    pub fn discriminator_graph(&self, h: usize, w: usize) -> Result<Graph> {
        Ok(self.config.discriminator(self.channels, h, w).graph()?)
    }

    /// Constant scale-indicator channel value for scale `k`.
    pub fn scale_value(&self, k: usize) -> f32 {
        k as f32 / self.config.levels as f32
    }

    pub fn step(&self) -> u64 {
        self.generators[0].step()
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            kind: "gan".into(),
            step: self.step(),
            config_hash: self.config.hash(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            config: self.config.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_string(&self.meta()).expect("metadata serializes");
        let mut c = Checkpoint::new(meta);
        for (i, (g, d)) in self.generators.iter().zip(&self.discriminators).enumerate() {
            c.push_network(&format!("generator{i}"), g);
            c.push_network(&format!("discriminator{i}"), d);
        }
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = CheckpointMeta::parse(ckpt)?;
        if meta.kind != "gan" {
            return Err(PipelineError::Config(format!(
                "expected a gan checkpoint, found kind '{}'",
                meta.kind
            )));
        }
        let mut model = Self::new(meta.config, meta.channels, meta.height, meta.width, &mut Rng::new(0))?;
        for i in 0..model.generators.len() {
            ckpt.restore_network(&format!("generator{i}"), &mut model.generators[i])?;
            ckpt.restore_network(&format!("discriminator{i}"), &mut model.discriminators[i])?;
        }
        Ok(model)
    }
}
