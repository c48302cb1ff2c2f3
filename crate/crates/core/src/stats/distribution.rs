//! Sample-distribution summaries: standardized moments, binned KL
//! divergence to the standard normal, and sparsity.

use statrs::function::erf::erf;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_KL_BINS: usize = 64;
/// Half-width of the KL histogram support, in standard deviations.
pub const KL_SUPPORT: f64 = 6.0;
const MIN_MOMENT_SAMPLES: usize = 4;
const MIN_KL_BINS: usize = 8;

/// Plug-in mean and (biased) standard deviation.
pub fn mean_std<S: Scalar>(samples: &[S]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|v| v.to_f64()).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|v| {
            let d = v.to_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

fn standardized_moment<S: Scalar>(samples: &[S], order: i32) -> Result<f64> {
    if samples.len() < MIN_MOMENT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_MOMENT_SAMPLES,
            got: samples.len(),
        });
    }
    let (mean, std) = mean_std(samples);
    if !(std > 0.0) || std <= mean.abs() * 1e-14 {
        return Err(Error::DegenerateDistribution(
            "sample standard deviation is zero".into(),
        ));
    }
    let n = samples.len() as f64;
    Ok(samples
        .iter()
        .map(|v| ((v.to_f64() - mean) / std).powi(order))
        .sum::<f64>()
        / n)
}

/// `E[((X − μ)/σ)³]` with plug-in moments.
pub fn skewness<S: Scalar>(samples: &[S]) -> Result<f64> {
    standardized_moment(samples, 3)
}

/// `E[((X − μ)/σ)⁴] − 3` with plug-in moments (normal ⇒ 0).
pub fn excess_kurtosis<S: Scalar>(samples: &[S]) -> Result<f64> {
    Ok(standardized_moment(samples, 4)? - 3.0)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Histogram estimate of `KL(p ‖ N(0, 1))` in nats.
///
/// Bins are equal-width over `[−6, 6]`; `p_i` is the fraction of all
/// samples in bin `i`, `q_i` the exact normal mass of that bin, and empty
/// bins contribute nothing. With `normalize`, samples are first shifted and
/// scaled to zero mean and unit variance.
pub fn kl_to_std_normal<S: Scalar>(samples: &[S], n_bins: usize, normalize: bool) -> Result<f64> {
    if n_bins < MIN_KL_BINS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_KL_BINS} bins, got {n_bins}"
        )));
    }
    if samples.len() < n_bins {
        return Err(Error::InsufficientData {
            needed: n_bins,
            got: samples.len(),
        });
    }
    let (shift, scale) = if normalize {
        let (mean, std) = mean_std(samples);
        if !(std > 0.0) {
            return Err(Error::DegenerateDistribution(
                "cannot normalize a constant sample".into(),
            ));
        }
        (mean, std)
    } else {
        (0.0, 1.0)
    };
    let width = 2.0 * KL_SUPPORT / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for v in samples {
        let z = (v.to_f64() - shift) / scale;
        if !(-KL_SUPPORT..=KL_SUPPORT).contains(&z) {
            continue;
        }
        let bin = (((z + KL_SUPPORT) / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    let n = samples.len() as f64;
    let mut kl = 0.0;
    for (i, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let lo = -KL_SUPPORT + i as f64 * width;
        let q = normal_cdf(lo + width) - normal_cdf(lo);
        let p = count as f64 / n;
        kl += p * (p / q).ln();
    }
    Ok(kl)
}

/// Fraction of coefficients with `|x| ≤ t`, or `x ≤ t` when `signed`.
pub fn sparsity<S: Scalar>(band: &[S], threshold: f64, signed: bool) -> Result<f64> {
    if band.is_empty() {
        return Err(shape_err!("sparsity of an empty band is undefined"));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sparsity threshold must be non-negative, got {threshold}"
        )));
    }
    let hits = band
        .iter()
        .filter(|v| {
            let x = v.to_f64();
            if signed {
                x <= threshold
            } else {
                x.abs() <= threshold
            }
        })
        .count();
    Ok(hits as f64 / band.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_a_symmetric_two_point_law() {
        // ±1 equally: skewness 0, fourth moment 1 → excess −2.
        let s = [1.0, -1.0, 1.0, -1.0];
        assert!(skewness(&s).unwrap().abs() < 1e-15);
        assert!((excess_kurtosis(&s).unwrap() + 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_short_samples() {
        assert!(matches!(
            skewness(&[2.0; 10]),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(matches!(
            excess_kurtosis(&[1.0, 2.0, 3.0]),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn kl_argument_checks() {
        let s = vec![0.0f64; 10];
        assert!(matches!(
            kl_to_std_normal(&s, 64, false),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            kl_to_std_normal(&s, 4, false),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn kl_of_a_point_mass() {
        // All mass in the bin [0, 0.1875): KL = −ln q.
        let s = vec![0.01f64; 100];
        let w = 12.0 / 64.0;
        let q = normal_cdf(w) - normal_cdf(0.0);
        assert!((kl_to_std_normal(&s, 64, false).unwrap() + q.ln()).abs() < 1e-12);
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(&[0.0f64; 8], 0.0, false).unwrap(), 1.0);
        assert_eq!(sparsity(&[1.0, 0.0, 1.0, 0.0], 0.5, false).unwrap(), 0.5);
        assert_eq!(sparsity(&[-5.0, 0.0, 5.0, 0.2], 0.5, false).unwrap(), 0.5);
        assert_eq!(sparsity(&[-5.0, 0.0, 5.0, 0.2], 0.5, true).unwrap(), 0.75);
        assert!(matches!(
            sparsity::<f64>(&[], 0.5, false),
            Err(Error::InvalidShape(_))
        ));
        assert!(sparsity(&[1.0], -0.1, false).is_err());
    }
}
