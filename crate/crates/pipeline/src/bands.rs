//! Subband bookkeeping shared by training and sampling.
//!
//! Haar low bands grow by a factor 2 per level, so a `[−1, 1]` image has a
//! level-`k` LL band in `[−2^k, 2^k]`. Networks see every level-`k` band
//! multiplied by `2^−k`, which keeps inputs and targets in the image range
//! and keeps the bridge variance (at most 1/4) meaningful.

use mscgm_core::tensor::{chw_to_hwc, hwc_extents, hwc_to_chw};
use mscgm_core::wavelet::dwt2;
use mscgm_core::{DetailBands, Result, Scalar, Tensor};

/// `2^−k`.
pub fn band_scale(k: usize) -> f64 {
    0.5f64.powi(k as i32)
}

/// Stacks HWC images into one `[B, C, H, W]` batch.
pub fn to_nchw<S: Scalar>(images: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let (h, w, c) = hwc_extents(images[0])?;
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        img.expect_same_shape(images[0])?;
        data.extend_from_slice(hwc_to_chw(img)?.data());
    }
    Tensor::new(&[images.len(), c, h, w], data)
}

/// Sample `i` of a `[B, C, H, W]` batch as an HWC image.
pub fn from_nchw<S: Scalar>(batch: &Tensor<S>, i: usize) -> Result<Tensor<S>> {
    let [_, c, h, w] = *batch.shape() else {
        return Err(mscgm_core::Error::InvalidShape(format!(
            "expected a [B, C, H, W] batch, got {:?}",
            batch.shape()
        )));
    };
    let per = c * h * w;
    let planes = Tensor::new(&[c, h, w], batch.data()[i * per..(i + 1) * per].to_vec())?;
    chw_to_hwc(&planes)
}

/// Concatenates two `[B, C, H, W]` batches along channels.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(mscgm_core::Error::InvalidShape(format!(
            "cannot concatenate {sa:?} and {sb:?} along channels"
        )));
    }
    let (pa, pb) = (a.numel() / sa[0], b.numel() / sb[0]);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..sa[0] {
        data.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
        data.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
    }
    Tensor::new(&[sa[0], sa[1] + sb[1], sa[2], sa[3]], data)
}

/// The bands of one image at every level, already multiplied by `2^−k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledBands<S> {
    /// `low[k−1]` is the level-`k` LL band.
    pub low: Vec<Tensor<S>>,
    /// `high[k−1]` is the level-`k` detail stack (LH, HL, HH channels).
    pub high: Vec<Tensor<S>>,
}

impl<S: Scalar> ScaledBands<S> {
    pub fn new(image: &Tensor<S>, levels: usize) -> Result<Self> {
        let mut low = Vec::with_capacity(levels);
        let mut high = Vec::with_capacity(levels);
        let mut current = image.clone();
        for k in 1..=levels {
            let (ll, details) = dwt2(&current)?.into_parts();
            let s = S::from_f64(band_scale(k));
            low.push(ll.scale(s));
            high.push(details.stack_channels().scale(s));
            current = ll;
        }
        Ok(Self { low, high })
    }

    pub fn levels(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self, k: usize) -> &Tensor<S> {
        &self.low[k - 1]
    }

    pub fn high(&self, k: usize) -> &Tensor<S> {
        &self.high[k - 1]
    }
}

/// Inverse step: scaled level-`k` bands → scaled level-`k−1` LL (the image
/// itself when `k = 1`).
pub fn merge_level<S: Scalar>(low: &Tensor<S>, high: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
    let up = S::from_f64(1.0 / band_scale(k));
    let details = DetailBands::unstack_channels(&high.scale(up))?;
    let set = mscgm_core::SubbandSet::from_parts(low.scale(up), details);
    let coarse = mscgm_core::wavelet::idwt2(&set)?;
    Ok(coarse.scale(S::from_f64(band_scale(k - 1))))
}
