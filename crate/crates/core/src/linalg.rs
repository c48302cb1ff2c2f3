//! Small dense linear algebra: symmetric eigendecomposition and Cholesky.
//!
//! Matrices are square `[n, n]` row-major tensors.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAX_EIGH_DIM: usize = 4096;
const SYMMETRY_RTOL: f64 = 1e-9;
const JACOBI_OFF_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Result of [`eigh_sym`]: eigenvalues ascending, eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<S> {
    pub values: Vec<S>,
    /// `[n, n]`; column `i` pairs with `values[i]`.
    pub vectors: Tensor<S>,
}

impl<S: Real> SymmetricEigen<S> {
    pub fn vector(&self, i: usize) -> Vec<S> {
        let n = self.values.len();
        (0..n).map(|r| self.vectors.data()[r * n + i]).collect()
    }
}

pub fn square_dim<S: Real>(m: &Tensor<S>) -> Result<usize> {
    match *m.shape() {
        [r, c] if r == c => Ok(r),
        _ => Err(shape_err!("expected a square matrix, got {:?}", m.shape())),
    }
}

pub fn check_symmetric<S: Real>(m: &Tensor<S>) -> Result<usize> {
    let n = square_dim(m)?;
    let a = m.data();
    let scale = a.iter().fold(S::zero(), |acc, v| acc.max(v.abs())).to_f64();
    let tol = SYMMETRY_RTOL * scale.max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (a[i * n + j] - a[j * n + i]).abs().to_f64();
            if d > tol {
                return Err(Error::Domain(format!(
                    "matrix is not symmetric: |m[{i},{j}] - m[{j},{i}]| = {d:e}"
                )));
            }
        }
    }
    Ok(n)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn eigh_sym<S: Real>(m: &Tensor<S>) -> Result<SymmetricEigen<S>> {
    let n = check_symmetric(m)?;
    if n > MAX_EIGH_DIM {
        return Err(Error::InvalidArgument(format!(
            "dimension {n} exceeds the supported maximum {MAX_EIGH_DIM}"
        )));
    }
    m.check_finite("eigh_sym input")?;
    // Work on the symmetrized copy so tiny asymmetries do not bias results.
    let mut a: Vec<S> = vec![S::zero(); n * n];
    let two = S::from_f64(2.0);
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (m.data()[i * n + j] + m.data()[j * n + i]) / two;
        }
    }
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }

    let frob = a.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt();
    let tol = S::from_f64(JACOBI_OFF_TOL) * frob.max(S::from_f64(f64::MIN_POSITIVE));

    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a, n);
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (two * apq);
                let sign = if theta < S::zero() { -S::one() } else { S::one() };
                let t = sign / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                rotate(&mut a, n, p, q, c, s);
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let off = off_diagonal_norm(&a, n);
    if off > tol * S::from_f64(1e3) {
        return Err(Error::Domain(format!(
            "Jacobi iteration did not converge (off-diagonal norm {:e})",
            off.to_f64()
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].partial_cmp(&a[j * n + j]).unwrap());
    let values: Vec<S> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![S::zero(); n * n];
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + col] = v[r * n + src];
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors: Tensor::new(&[n, n], vectors)?,
    })
}

fn off_diagonal_norm<S: Real>(a: &[S], n: usize) -> S {
    let mut acc = S::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc = acc + a[i * n + j] * a[i * n + j];
            }
        }
    }
    acc.sqrt()
}

/// Applies `A ← Jᵀ A J` for the Givens rotation in the (p, q) plane.
fn rotate<S: Real>(a: &mut [S], n: usize, p: usize, q: usize, c: S, s: S) {
    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
}

/// Lower-triangular Cholesky factor `L` with `m = L·Lᵀ`.
pub fn cholesky<S: Real>(m: &Tensor<S>) -> Result<Tensor<S>> {
    let n = check_symmetric(m)?;
    let a = m.data();
    let mut l = vec![S::zero(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - l[j * n + k] * l[j * n + k];
        }
        if !(d > S::zero()) {
            return Err(Error::Domain(format!(
                "matrix is not positive definite (pivot {j} = {:e})",
                d.to_f64()
            )));
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Tensor::new(&[n, n], l)
}

/// Solves `m·x = b` given the Cholesky factor of `m`.
pub fn cholesky_solve<S: Real>(l: &Tensor<S>, b: &[S]) -> Result<Vec<S>> {
    let n = square_dim(l)?;
    if b.len() != n {
        return Err(shape_err!("rhs has {} entries, matrix is {n}×{n}", b.len()));
    }
    let l = l.data();
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Dense `a·b` for `[m,k]·[k,n]`.
pub fn matmul<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(shape_err!("matmul needs 2-D operands, got {:?} and {:?}", a.shape(), b.shape()));
    };
    if k != k2 {
        return Err(shape_err!("inner extents differ: {:?} · {:?}", a.shape(), b.shape()));
    }
    let mut c = vec![S::zero(); m * n];
    S::gemm(m, k, n, S::one(), a.data(), k as isize, 1, b.data(), n as isize, 1, S::zero(), &mut c, n as isize, 1);
    Tensor::new(&[m, n], c)
}

pub fn transpose<S: Real>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let &[m, n] = a.shape() else {
        return Err(shape_err!("transpose needs a 2-D operand, got {:?}", a.shape()));
    };
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

pub fn matvec<S: Real>(a: &Tensor<S>, x: &[S]) -> Result<Vec<S>> {
    let &[m, n] = a.shape() else {
        return Err(shape_err!("matvec needs a 2-D matrix, got {:?}", a.shape()));
    };
    if x.len() != n {
        return Err(shape_err!("vector has {} entries, matrix has {n} columns", x.len()));
    }
    Ok((0..m)
        .map(|i| {
            let row = &a.data()[i * n..(i + 1) * n];
            row.iter().zip(x).fold(S::zero(), |acc, (&r, &v)| acc + r * v)
        })
        .collect())
}

pub fn identity<S: Real>(n: usize) -> Tensor<S> {
    Tensor::from_fn(&[n, n], |i| if i / n == i % n { S::one() } else { S::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_symmetric(n: usize, seed: u64) -> Tensor<f64> {
        let g: Tensor<f64> = Rng::new(seed).randn(&[n, n]).unwrap();
        let gt = transpose(&g).unwrap();
        g.add(&gt).unwrap()
    }

    #[test]
    fn identity_and_diagonal() {
        let e = eigh_sym(&identity::<f64>(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let d = Tensor::new(&[3, 3], vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let e = eigh_sym(&d).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn residual_orthonormality_and_trace() {
        for seed in 0..5 {
            let m = random_symmetric(8, seed);
            let norm = m.norm_sq().sqrt();
            let e = eigh_sym(&m).unwrap();
            for i in 0..8 {
                let v = e.vector(i);
                let mv = matvec(&m, &v).unwrap();
                let res: f64 = mv
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - e.values[i] * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(res <= 1e-8 * norm, "residual {res}");
                for j in 0..8 {
                    let dot: f64 = v.iter().zip(e.vector(j)).map(|(a, b)| a * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() <= 1e-8);
                }
            }
            let trace: f64 = (0..8).map(|i| m.data()[i * 9]).sum();
            let sum: f64 = e.values.iter().sum();
            assert!((trace - sum).abs() <= 1e-8 * trace.abs().max(1.0));
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn asymmetric_is_a_domain_error() {
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 2.1, 1.0]).unwrap();
        assert!(matches!(eigh_sym(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn cholesky_solves() {
        let g: Tensor<f64> = Rng::new(3).randn(&[6, 6]).unwrap();
        let spd = matmul(&g, &transpose(&g).unwrap())
            .unwrap()
            .add(&identity(6))
            .unwrap();
        let l = cholesky(&spd).unwrap();
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let x = cholesky_solve(&l, &b).unwrap();
        let back = matvec(&spd, &x).unwrap();
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        let not_pd = Tensor::new(&[2, 2], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(cholesky(&not_pd), Err(Error::Domain(_))));
    }
}
