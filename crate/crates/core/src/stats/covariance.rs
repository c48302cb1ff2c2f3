//! Patch covariance conditioning and the spatial/wavelet Gaussian score
//! duality.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{cholesky, cholesky_solve, eigh_sym, matmul, matvec, transpose, MAX_EIGH_DIM};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::analysis_matrix;

/// Ridge added to every sample covariance before its spectrum is taken.
pub const COVARIANCE_RIDGE: f64 = 1e-9;
pub const MAX_DUALITY_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionReport {
    pub kappa: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub dim: usize,
    pub n_patches: usize,
    /// Fewer patches than `dim + 1`: the sample covariance is singular and
    /// `kappa` reflects the ridge.
    pub rank_deficient: bool,
}

/// Sample covariance (denominator `n − 1`) of equally sized flattened patches.
pub fn sample_covariance<S: Scalar>(patches: &[Vec<S>]) -> Result<Tensor<f64>> {
    if patches.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: patches.len(),
        });
    }
    let d = patches[0].len();
    if d == 0 {
        return Err(shape_err!("patches must be non-empty"));
    }
    if let Some(p) = patches.iter().find(|p| p.len() != d) {
        return Err(shape_err!(
            "patch of length {} differs from the first patch length {d}",
            p.len()
        ));
    }
    let n = patches.len();
    let mut mean = vec![0.0; d];
    for p in patches {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v.to_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = Vec::with_capacity(n * d);
    for p in patches {
        centered.extend(p.iter().zip(&mean).map(|(v, m)| v.to_f64() - m));
    }
    let mut cov = vec![0.0; d * d];
    // Xᵀ X with X stored n × d row-major.
    f64::gemm(
        d,
        n,
        d,
        1.0 / (n - 1) as f64,
        &centered,
        1,
        d as isize,
        &centered,
        d as isize,
        1,
        0.0,
        &mut cov,
        d as isize,
        1,
    );
    Tensor::new(&[d, d], cov)
}

/// `λ_max / λ_min` of the ridge-regularized sample covariance.
pub fn condition_number<S: Scalar>(patches: &[Vec<S>]) -> Result<ConditionReport> {
    let mut cov = sample_covariance(patches)?;
    let d = cov.shape()[0];
    if d > MAX_EIGH_DIM {
        return Err(shape_err!(
            "patch dimension {d} exceeds the eigensolver limit {MAX_EIGH_DIM}"
        ));
    }
    for i in 0..d {
        cov.data_mut()[i * d + i] += COVARIANCE_RIDGE;
    }
    // Exact symmetry for the eigensolver.
    for i in 0..d {
        for j in i + 1..d {
            let avg = 0.5 * (cov.data()[i * d + j] + cov.data()[j * d + i]);
            cov.data_mut()[i * d + j] = avg;
            cov.data_mut()[j * d + i] = avg;
        }
    }
    let eig = eigh_sym(&cov)?;
    let lambda_min = eig.values[0];
    let lambda_max = eig.values[d - 1];
    if !(lambda_min > 0.0) {
        return Err(Error::Domain(format!(
            "regularized covariance has non-positive eigenvalue {lambda_min}"
        )));
    }
    Ok(ConditionReport {
        kappa: lambda_max / lambda_min,
        lambda_min,
        lambda_max,
        dim: d,
        n_patches: patches.len(),
        rank_deficient: patches.len() < d + 1,
    })
}

/// Covariance of the Ornstein-Uhlenbeck marginal started from `N(0, Σ)`:
/// `Σ_t = e^{−2t} Σ + (1 − e^{−2t}) I`.
pub fn ou_covariance(sigma: &Tensor<f64>, t: f64) -> Result<Tensor<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("OU time must be non-negative, got {t}")));
    }
    let [d, d2] = *sigma.shape() else {
        return Err(shape_err!("covariance must be square, got {:?}", sigma.shape()));
    };
    if d != d2 {
        return Err(shape_err!("covariance must be square, got {:?}", sigma.shape()));
    }
    let decay = (-2.0 * t).exp();
    let mut out = sigma.scale(decay);
    for i in 0..d {
        out.data_mut()[i * d + i] += 1.0 - decay;
    }
    Ok(out)
}

/// Score `−Σ_t⁻¹ x` of the OU marginal.
pub fn ou_score(sigma: &Tensor<f64>, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let cov = ou_covariance(sigma, t)?;
    if x.len() != cov.shape()[0] {
        return Err(shape_err!(
            "point of length {} for a {}-dimensional covariance",
            x.len(),
            cov.shape()[0]
        ));
    }
    let l = cholesky(&cov)?;
    Ok(cholesky_solve(&l, x)?.into_iter().map(|v| -v).collect())
}

/// Maximum deviation between the wavelet-domain score `r_t(w)` of the
/// pushed-forward Gaussian and `A s_t(Aᵀ w)` built from the spatial score.
///
/// `sigma` is the spatial covariance of `h·w` pixels, `point` a wavelet-domain
/// coefficient vector and `A` the `levels`-scale Haar analysis matrix.
pub fn duality_check(
    sigma: &Tensor<f64>,
    t: f64,
    point: &[f64],
    height: usize,
    width: usize,
    levels: usize,
) -> Result<f64> {
    let d = height * width;
    if d > MAX_DUALITY_DIM {
        return Err(shape_err!(
            "duality check supports at most {MAX_DUALITY_DIM} dimensions, got {d}"
        ));
    }
    if sigma.shape() != [d, d] {
        return Err(shape_err!(
            "covariance {:?} does not match a {height}×{width} image",
            sigma.shape()
        ));
    }
    // Rejects non-PD input before any transform.
    cholesky(sigma)?;
    let a = analysis_matrix::<f64>(height, width, levels)?;
    let at = transpose(&a)?;

    let spatial_point = matvec(&at, point)?;
    let spatial_score = ou_score(sigma, t, &spatial_point)?;
    let mapped = matvec(&a, &spatial_score)?;

    let sigma_w = matmul(&matmul(&a, sigma)?, &at)?;
    let wavelet_score = ou_score(&sigma_w, t, point)?;

    Ok(mapped
        .iter()
        .zip(&wavelet_score)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;

    #[test]
    fn covariance_of_two_points() {
        let cov = sample_covariance(&[vec![0.0, 0.0], vec![2.0, -2.0]]).unwrap();
        assert_eq!(cov.data(), &[2.0, -2.0, -2.0, 2.0]);
    }

    #[test]
    fn ragged_patches_are_rejected() {
        assert!(matches!(
            sample_covariance(&[vec![0.0, 1.0], vec![1.0]]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let patches: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 1.0, -(i as f64), 0.5]).collect();
        let r = condition_number(&patches).unwrap();
        assert!(r.rank_deficient);
        assert!(r.kappa > 1e6);
    }

    #[test]
    fn isotropic_duality() {
        let x: Vec<f64> = (0..16).map(|i| i as f64 * 0.1 - 0.7).collect();
        let dev = duality_check(&identity(16), 0.3, &x, 4, 4, 2).unwrap();
        assert!(dev <= 1e-10);
        // Identity covariance: score is −x at every t.
        let s = ou_score(&identity(16), 0.3, &x).unwrap();
        for (a, b) in s.iter().zip(&x) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_pd_covariance_is_a_domain_error() {
        let mut sigma = identity::<f64>(4);
        sigma.data_mut()[0] = -1.0;
        assert!(matches!(
            duality_check(&sigma, 0.5, &[0.0; 4], 2, 2, 1),
            Err(Error::Domain(_))
        ));
    }
}
