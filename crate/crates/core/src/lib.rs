//! Numerical core: tensors, seeded randomness, the orthonormal Haar
//! transform, Brownian-bridge diffusion and the statistics used to study
//! subband distributions.
//!
//! Generic code is written over [`Scalar`]; the aliases below fix the
//! precision for callers that do not care.

pub mod bbdp;
pub mod error;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod tensor;
pub mod wavelet;

pub use bbdp::{BridgeSchedule, EpsPredictor, TimestepGrid};
pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::{DType, Dual, Real, Scalar};
pub use tensor::Tensor;
pub use wavelet::{Band, DetailBands, SubbandPyramid, SubbandSet};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Dual32 = Dual<f32>;
pub type Dual64 = Dual<f64>;
pub type Pyramid32 = SubbandPyramid<f32>;
pub type Pyramid64 = SubbandPyramid<f64>;
