#![allow(dead_code)]

use mscgm_core::{Rng, Tensor};
use mscgm_pipeline::synthetic::{restoration_pairs, shapes_image};
use mscgm_pipeline::{Degradation, Pair, PairedDataset, TrainConfig};

/// Small networks suitable for 16×16 images at two levels.
pub fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.levels = 2;
    cfg.timesteps = 50;
    cfg.bbdp.steps = 10;
    cfg.bbdp.batch_size = 4;
    cfg.bbdp.unet.base_channels = 8;
    cfg.gan.epochs = 2;
    cfg.gan.batch_size = 2;
    cfg.gan.generator.base_channels = 8;
    cfg.gan.discriminator.base_channels = 4;
    cfg
}

pub fn blur_pairs(count: usize, size: usize, seed: u64) -> PairedDataset {
    let pairs = restoration_pairs(count, size, &[Degradation::Blur { sigma: 1.5 }], &mut Rng::new(seed)).unwrap();
    PairedDataset::from_pairs(pairs, 2).unwrap()
}

pub fn identity_pair(size: usize, seed: u64) -> PairedDataset {
    let x: Tensor<f32> = shapes_image(size, &mut Rng::new(seed)).cast();
    let pair = Pair {
        cond: x.clone(),
        target: x,
        source: "identity".into(),
    };
    PairedDataset::from_pairs(vec![pair], 2).unwrap()
}
