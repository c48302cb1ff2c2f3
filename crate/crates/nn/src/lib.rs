//! A small static-graph network library with exact reverse-mode gradients,
//! AdamW, and EMA weights.
//!
//! Tensors are batch-first NCHW. Every pass is generic over
//! [`mscgm_core::Scalar`], so the same code evaluates on `f32`, `f64` and
//! dual numbers.

pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod models;
pub mod network;

pub use exec::{backward, forward, Gradients, Trace};
pub use graph::{Graph, GraphBuilder, Init, NodeId, Op, ParamId, ParamSpec};
pub use loss::{gradient_penalty, l1, mse, ssim_loss, GradientPenalty, LossGrad, SsimLossConfig};
pub use models::{
    build_discriminator, build_eps_unet, build_generator, DiscriminatorConfig, EpsUnetConfig, GeneratorConfig,
};
pub use network::{AdamWConfig, Network, NetworkState};
