//! Datasets, training and full restoration for the multi-scale conditional
//! generative model: a Brownian-bridge diffusion on the coarsest Haar low
//! band plus adversarially trained detail bands.

pub mod bands;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod imageio;
pub mod model;
pub mod sample;
pub mod synthetic;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use dataset::{load_dataset, Pair, PairedDataset};
pub use degrade::Degradation;
pub use error::{PipelineError, Result};
pub use model::{BbdpModel, CheckpointMeta, GanModel};
pub use sample::{sample_full, sample_full_with, SampleReport};
pub use train::{train_bbdp, train_msgan, GanTrainer, TrainLog};
