//! Batched numeric kernels shared by the forward and reverse passes.

pub mod attention;
pub mod conv;
pub mod norm;
