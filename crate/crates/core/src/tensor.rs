//! Dense row-major tensors.

use crate::error::{shape_err, Error, Result};
use crate::scalar::{Real, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Wraps `data` with `shape`; the element count must match.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        validate_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                numel,
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Like [`Tensor::new`] but additionally rejects NaN/Inf.
    pub fn new_finite(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(shape_err!(
                "cannot reshape {:?} into {:?}",
                self.shape,
                shape
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_into<T: Scalar>(&self, f: impl Fn(S) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: S) -> Self {
        self.map(|v| v * factor)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Sum in index order.
    pub fn sum(&self) -> S {
        let mut acc = S::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn norm_sq(&self) -> S {
        let mut acc = S::zero();
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).to_f64().abs())
            .fold(0.0, f64::max))
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        self.map_into(|v| T::from_f64(v.to_f64()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{context}: element {i} of tensor {:?} is not finite",
                self.shape
            ))),
        }
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "shape mismatch: {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(())
    }
}

impl<S: Real> Tensor<S> {
    pub fn clamp(&self, lo: S, hi: S) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(shape_err!("shape must have at least one extent"));
    }
    if let Some(i) = shape.iter().position(|&e| e == 0) {
        return Err(shape_err!("extent {i} of {:?} is zero", shape));
    }
    Ok(())
}

/// Image tensors are stored height × width × channels.
pub fn hwc_extents<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        [h, w] => Ok((h, w, 1)),
        _ => Err(shape_err!(
            "expected an H×W×C image, got shape {:?}",
            t.shape()
        )),
    }
}

/// HWC image → CHW planes.
pub fn hwc_to_chw<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w, c) = hwc_extents(t)?;
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.push(src[(y * w + x) * c + ch]);
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// CHW planes → HWC image.
pub fn chw_to_hwc<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    let [c, h, w] = *t.shape() else {
        return Err(shape_err!("expected C×H×W planes, got {:?}", t.shape()));
    };
    let src = t.data();
    let mut out = vec![S::zero(); src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * c + ch] = src[(ch * h + y) * w + x];
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}
