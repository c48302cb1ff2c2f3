//! Full-reference image quality metrics.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{hwc_extents, Tensor};

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, max_val: f64) -> Result<f64> {
    a.expect_same_shape(b)?;
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_val must be positive, got {max_val}"
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Renders a dB value, spelling the identical-input sentinel as `inf`.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub max_val: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            max_val: 1.0,
        }
    }
}

impl SsimParams {
    pub fn with_max_val(max_val: f64) -> Self {
        Self {
            max_val,
            ..Self::default()
        }
    }
}

/// Normalized 1-D Gaussian taps centred on the middle sample.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Local SSIM map of each channel, valid region only. Returns
/// `(map_h, map_w, maps)` with one map per channel.
pub fn ssim_maps<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    params: &SsimParams,
) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    a.expect_same_shape(b)?;
    let (h, w, c) = hwc_extents(a)?;
    if params.window == 0 || h < params.window || w < params.window {
        return Err(shape_err!(
            "image {h}×{w} is smaller than the {0}×{0} SSIM window",
            params.window
        ));
    }
    if !(params.max_val > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_val must be positive, got {}",
            params.max_val
        )));
    }
    let taps = gaussian_window(params.window, params.sigma);
    let c1 = (params.k1 * params.max_val).powi(2);
    let c2 = (params.k2 * params.max_val).powi(2);
    let (oh, ow) = (h - params.window + 1, w - params.window + 1);
    let mut maps = Vec::with_capacity(c);
    for ch in 0..c {
        let pa: Vec<f64> = (0..h * w).map(|i| a.data()[i * c + ch].to_f64()).collect();
        let pb: Vec<f64> = (0..h * w).map(|i| b.data()[i * c + ch].to_f64()).collect();
        let mu_a = filter_valid(&pa, h, w, &taps);
        let mu_b = filter_valid(&pb, h, w, &taps);
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            let p: Vec<f64> = pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect();
            filter_valid(&p, h, w, &taps)
        };
        let e_aa = prod(&|x, _| x * x);
        let e_bb = prod(&|_, y| y * y);
        let e_ab = prod(&|x, y| x * y);
        let map = (0..oh * ow)
            .map(|i| {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = e_aa[i] - ma * ma;
                let vb = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .collect();
        maps.push(map);
    }
    Ok((oh, ow, maps))
}

/// Mean structural similarity over the valid region and all channels.
pub fn ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, max_val: f64) -> Result<f64> {
    ssim_with(a, b, &SsimParams::with_max_val(max_val))
}

pub fn ssim_with<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, params: &SsimParams) -> Result<f64> {
    let (_, _, maps) = ssim_maps(a, b, params)?;
    let count: usize = maps.iter().map(Vec::len).sum();
    Ok(maps.iter().flatten().sum::<f64>() / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = Tensor::<f64>::full(&[4, 4], 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let z = Tensor::<f64>::zeros(&[3, 3]);
        let m = Tensor::<f64>::full(&[3, 3], 255.0);
        assert!(psnr(&z, &m, 255.0).unwrap().abs() < 1e-12);
        assert!(matches!(
            psnr(&z, &Tensor::zeros(&[3, 4]), 1.0),
            Err(Error::InvalidShape(_))
        ));
        assert_eq!(format_db(f64::INFINITY), "inf");
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(g[i], g[10 - i]);
        }
    }

    #[test]
    fn ssim_identity_and_small_inputs() {
        let a = Tensor::<f64>::from_fn(&[16, 16], |i| ((i * 37) % 11) as f64 / 10.0);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
        let small = Tensor::<f64>::zeros(&[10, 16]);
        assert!(matches!(ssim(&small, &small, 1.0), Err(Error::InvalidShape(_))));
    }
}
