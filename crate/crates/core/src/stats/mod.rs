//! Image-quality metrics and statistical diagnostics of subband
//! distributions.

pub mod corpus;
pub mod covariance;
pub mod distribution;
pub mod metrics;
pub mod scan;

pub use covariance::{condition_number, duality_check, ConditionReport};
pub use distribution::{excess_kurtosis, kl_to_std_normal, skewness, sparsity};
pub use metrics::{psnr, ssim, ssim_with, SsimParams};
pub use scan::{scan_csv, scan_csv_header, subband_scan, ScanOptions, SubbandStatsRow};
