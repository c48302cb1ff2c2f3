//! Scalar abstraction shared by every numeric kernel.
//!
//! [`Scalar`] is the minimal arithmetic surface the kernels need. It is
//! implemented for `f32`, `f64` and for [`Dual`] numbers over either, so the
//! same forward/backward code can be run in forward-mode to obtain exact
//! Hessian-vector products. [`Real`] narrows it to the storable IEEE types.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{Float, One, Zero};

/// On-disk element type code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    fn from_f64(v: f64) -> Self;
    /// Real part as `f64`.
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    /// Larger of two values; compares real parts for dual numbers.
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// `c = alpha * a·b + beta * c` on strided row/column-major views.
    ///
    /// `a` is m×k, `b` is k×n, `c` is m×n. The default is a plain triple loop;
    /// the IEEE types route to an optimized kernel.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        for i in 0..m {
            for j in 0..n {
                let ci = (i as isize * rsc + j as isize * csc) as usize;
                let mut acc = Self::zero();
                for p in 0..k {
                    let ai = (i as isize * rsa + p as isize * csa) as usize;
                    let bi = (p as isize * rsb + j as isize * csb) as usize;
                    acc += a[ai] * b[bi];
                }
                c[ci] = if beta == Self::zero() {
                    alpha * acc
                } else {
                    alpha * acc + beta * c[ci]
                };
            }
        }
    }
}

/// IEEE floating-point element types that can be stored and serialized.
pub trait Real: Scalar {
    const DTYPE: DType;
    fn floor(self) -> Self;
    fn round(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
    fn from_le_chunk(bytes: &[u8]) -> Self;
}

macro_rules! impl_ieee {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                Float::sqrt(self)
            }
            #[inline]
            fn exp(self) -> Self {
                Float::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                Float::ln(self)
            }
            #[inline]
            fn sin(self) -> Self {
                Float::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                Float::cos(self)
            }
            #[inline]
            fn abs(self) -> Self {
                Float::abs(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                Float::powi(self, n)
            }
            #[inline]
            fn is_finite(self) -> bool {
                Float::is_finite(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(m, k, rsa, csa, a.len());
                check_extent(k, n, rsb, csb, b.len());
                check_extent(m, n, rsc, csc, c.len());
                // SAFETY: the three views were bounds-checked against their
                // slices above, and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }

        impl Real for $t {
            const DTYPE: DType = $dtype;

            #[inline]
            fn floor(self) -> Self {
                Float::floor(self)
            }
            #[inline]
            fn round(self) -> Self {
                Float::round(self)
            }
            #[inline]
            fn powf(self, e: Self) -> Self {
                Float::powf(self, e)
            }

            fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
                let mut out = Vec::with_capacity(values.len() * std::mem::size_of::<$t>());
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out
            }

            fn from_le_chunk(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("chunk width"))
            }
        }
    };
}

fn check_extent(rows: usize, cols: usize, rs: isize, cs: isize, len: usize) {
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "gemm view exceeds buffer ({last} >= {len})");
}

impl_ieee!(f32, DType::F32, matrixmultiply::sgemm);
impl_ieee!(f64, DType::F64, matrixmultiply::dgemm);

/// Forward-mode dual number `re + du·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub du: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, du: S) -> Self {
        Self { re, du }
    }

    pub fn constant(re: S) -> Self {
        Self { re, du: S::zero() }
    }
}

impl<S: Scalar> PartialOrd for Dual<S> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<S: Scalar> Zero for Dual<S> {
    fn zero() -> Self {
        Self::constant(S::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.du.is_zero()
    }
}

impl<S: Scalar> One for Dual<S> {
    fn one() -> Self {
        Self::constant(S::one())
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.du + o.du)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.du - o.du)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = S::one() / o.re;
        Self::new(self.re * inv, (self.du * o.re - self.re * o.du) * inv * inv)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.du)
    }
}

impl<S: Scalar> AddAssign for Dual<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> SubAssign for Dual<S> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<S: Scalar> MulAssign for Dual<S> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<S: Scalar> DivAssign for Dual<S> {
    fn div_assign(&mut self, o: Self) {
        *self = *self / o;
    }
}

impl<S: Scalar> Sum for Dual<S> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn from_f64(v: f64) -> Self {
        Self::constant(S::from_f64(v))
    }
    fn to_f64(self) -> f64 {
        self.re.to_f64()
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Self::new(r, self.du / (S::from_f64(2.0) * r))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.du * e)
    }
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.du / self.re)
    }
    fn sin(self) -> Self {
        Self::new(self.re.sin(), self.du * self.re.cos())
    }
    fn cos(self) -> Self {
        Self::new(self.re.cos(), -self.du * self.re.sin())
    }
    fn abs(self) -> Self {
        if self.re < S::zero() {
            -self
        } else {
            self
        }
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let p = self.re.powi(n - 1);
        Self::new(p * self.re, S::from_f64(n as f64) * p * self.du)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.du.is_finite()
    }

    /// Splits into real and dual planes so the product runs on three
    /// optimized real kernels: `(A + εA')(B + εB') = AB + ε(A'B + AB')`.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        let gather = |src: &[Self], rows: usize, cols: usize, rs: isize, cs: isize| {
            let mut re = Vec::with_capacity(rows * cols);
            let mut du = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    let v = src[(i as isize * rs + j as isize * cs) as usize];
                    re.push(v.re);
                    du.push(v.du);
                }
            }
            (re, du)
        };
        let (a_re, a_du) = gather(a, m, k, rsa, csa);
        let (b_re, b_du) = gather(b, k, n, rsb, csb);
        let mut re = vec![S::zero(); m * n];
        let mut du = vec![S::zero(); m * n];
        let (ki, ni) = (k as isize, n as isize);
        S::gemm(m, k, n, S::one(), &a_re, ki, 1, &b_re, ni, 1, S::zero(), &mut re, ni, 1);
        S::gemm(m, k, n, S::one(), &a_du, ki, 1, &b_re, ni, 1, S::zero(), &mut du, ni, 1);
        S::gemm(m, k, n, S::one(), &a_re, ki, 1, &b_du, ni, 1, S::one(), &mut du, ni, 1);
        for i in 0..m {
            for j in 0..n {
                let prod = Dual::new(re[i * n + j], du[i * n + j]);
                let ci = (i as isize * rsc + j as isize * csc) as usize;
                c[ci] = if beta == Self::zero() {
                    alpha * prod
                } else {
                    alpha * prod + beta * c[ci]
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn optimized_gemm_matches_loops() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        f64::gemm(m, k, n, 1.0, &a, k as isize, 1, &b, n as isize, 1, 0.0, &mut c, n as isize, 1);
        let want = naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_views() {
        // a stored as k×m, used as its transpose
        let (m, k, n) = (3, 4, 2);
        let at: Vec<f64> = (0..k * m).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 + i as f64).collect();
        let a: Vec<f64> = (0..m * k).map(|idx| at[(idx % k) * m + idx / k]).collect();
        let mut c = vec![0.0; m * n];
        f64::gemm(m, k, n, 1.0, &at, 1, m as isize, &b, n as isize, 1, 0.0, &mut c, n as isize, 1);
        assert_eq!(c, naive(m, k, n, &a, &b));
    }

    #[test]
    fn dual_gemm_carries_derivative() {
        let (m, k, n) = (2, 3, 2);
        let a: Vec<Dual<f64>> = (0..m * k).map(|i| Dual::new(i as f64, 1.0)).collect();
        let b: Vec<Dual<f64>> = (0..k * n).map(|i| Dual::new(0.5 * i as f64, -(i as f64))).collect();
        let mut fast = vec![Dual::zero(); m * n];
        Dual::gemm(m, k, n, Dual::one(), &a, k as isize, 1, &b, n as isize, 1, Dual::zero(), &mut fast, n as isize, 1);
        let mut slow = vec![Dual::<f64>::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    slow[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        assert_eq!(fast, slow);
    }

    #[test]
    fn dual_elementary_derivatives() {
        let x = Dual::new(0.7_f64, 1.0);
        assert!((x.exp().du - 0.7_f64.exp()).abs() < 1e-15);
        assert!((x.sqrt().du - 0.5 / 0.7_f64.sqrt()).abs() < 1e-15);
        assert!((x.ln().du - 1.0 / 0.7).abs() < 1e-15);
        assert!((x.powi(3).du - 3.0 * 0.49).abs() < 1e-15);
        assert!(((x / Dual::constant(2.0)).du - 0.5).abs() < 1e-15);
    }
}
