//! Per-scale, per-band statistics of a corpus under the Haar pyramid.

use std::fmt::Write as _;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::stats::distribution::{
    excess_kurtosis, kl_to_std_normal, skewness, sparsity, DEFAULT_KL_BINS,
};
use crate::tensor::{hwc_extents, Tensor};
use crate::wavelet::{check_divisible, dwt2, Band};

#[derive(Clone, Debug, PartialEq)]
pub struct SubbandStatsRow {
    /// 1 is the finest scale.
    pub scale: usize,
    pub band: Band,
    pub kl_divergence: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// `(threshold, fraction)` in the order thresholds were requested.
    pub sparsity: Vec<(f64, f64)>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOptions {
    pub levels: usize,
    pub thresholds: Vec<f64>,
    pub kl_bins: usize,
    /// Counts `x ≤ t` instead of `|x| ≤ t`.
    pub signed_sparsity: bool,
    /// Square patch extent; `None` scans whole images.
    pub patch: Option<usize>,
    pub patches_per_image: usize,
    pub seed: u64,
}

impl ScanOptions {
    pub fn new(levels: usize, thresholds: Vec<f64>) -> Self {
        Self {
            levels,
            thresholds,
            kl_bins: DEFAULT_KL_BINS,
            signed_sparsity: false,
            patch: None,
            patches_per_image: 1,
            seed: 0,
        }
    }
}

fn crop<S: Scalar>(img: &Tensor<S>, y0: usize, x0: usize, size: usize) -> Result<Tensor<S>> {
    let (_, w, c) = hwc_extents(img)?;
    let mut out = Vec::with_capacity(size * size * c);
    for y in y0..y0 + size {
        let start = (y * w + x0) * c;
        out.extend_from_slice(&img.data()[start..start + size * c]);
    }
    Tensor::new(&[size, size, c], out)
}

fn sample_regions<S: Scalar>(images: &[Tensor<S>], opts: &ScanOptions) -> Result<Vec<Tensor<S>>> {
    let Some(p) = opts.patch else {
        return Ok(images.to_vec());
    };
    let mut rng = Rng::new(opts.seed);
    let mut out = Vec::with_capacity(images.len() * opts.patches_per_image);
    for img in images {
        let (h, w, _) = hwc_extents(img)?;
        if p > h || p > w {
            return Err(shape_err!("patch {p} exceeds image {h}×{w}"));
        }
        for _ in 0..opts.patches_per_image {
            let y0 = rng.int_inclusive(0, h - p);
            let x0 = rng.int_inclusive(0, w - p);
            out.push(crop(img, y0, x0, p)?);
        }
    }
    Ok(out)
}

/// Decomposes every image (or patch), pools coefficients per (scale, band)
/// and reports their statistics, ordered scale-major then LL, LH, HL, HH.
///
/// KL divergence is measured on the standardized pool; sparsity on the raw
/// coefficients.
pub fn subband_scan<S: Scalar>(images: &[Tensor<S>], opts: &ScanOptions) -> Result<Vec<SubbandStatsRow>> {
    if opts.levels == 0 {
        return Err(Error::InvalidArgument("levels must be at least 1".into()));
    }
    if images.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if opts.thresholds.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "sparsity thresholds must be non-negative, got {:?}",
            opts.thresholds
        )));
    }
    let regions = sample_regions(images, opts)?;
    let mut pools: Vec<[Vec<f64>; 4]> = (0..opts.levels).map(|_| Default::default()).collect();
    for region in &regions {
        let (h, w, _) = hwc_extents(region)?;
        check_divisible(h, w, opts.levels)?;
        let mut ll = region.cast::<f64>();
        for pool in pools.iter_mut() {
            let set = dwt2(&ll)?;
            for (i, band) in Band::ALL.iter().enumerate() {
                pool[i].extend_from_slice(set.band(*band).data());
            }
            ll = set.ll;
        }
    }
    let mut rows = Vec::with_capacity(opts.levels * 4);
    for (k, pool) in pools.iter().enumerate() {
        for (i, band) in Band::ALL.iter().enumerate() {
            let samples = &pool[i];
            let sparsity = opts
                .thresholds
                .iter()
                .map(|&t| Ok((t, sparsity(samples, t, opts.signed_sparsity)?)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(SubbandStatsRow {
                scale: k + 1,
                band: *band,
                kl_divergence: kl_to_std_normal(samples, opts.kl_bins, true)?,
                skewness: skewness(samples)?,
                excess_kurtosis: excess_kurtosis(samples)?,
                sparsity,
                n_samples: samples.len(),
            });
        }
    }
    Ok(rows)
}

/// CSV header; one sparsity column per threshold.
pub fn scan_csv_header(thresholds: &[f64]) -> String {
    let mut h = String::from("scale,band,kl_divergence,skewness,excess_kurtosis");
    for t in thresholds {
        write!(h, ",sparsity_t{t}").unwrap();
    }
    h.push_str(",n_samples");
    h
}

pub fn scan_csv(rows: &[SubbandStatsRow], thresholds: &[f64]) -> String {
    let mut out = scan_csv_header(thresholds);
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.scale,
            r.band.name(),
            r.kl_divergence,
            r.skewness,
            r.excess_kurtosis
        )
        .unwrap();
        for (_, s) in &r.sparsity {
            write!(out, ",{s}").unwrap();
        }
        writeln!(out, ",{}", r.n_samples).unwrap();
    }
    out
}

/// Corpus-level non-Gaussianity of the raw pixels and of the finest-scale
/// detail coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusSummary {
    pub pixel_skewness: f64,
    pub pixel_excess_kurtosis: f64,
    pub detail_skewness: f64,
    pub detail_excess_kurtosis: f64,
    pub n_pixels: usize,
}

pub fn corpus_summary<S: Scalar>(images: &[Tensor<S>]) -> Result<CorpusSummary> {
    let mut pixels = Vec::new();
    let mut details = Vec::new();
    for img in images {
        pixels.extend(img.data().iter().map(|v| v.to_f64()));
        let set = dwt2(&img.cast::<f64>())?;
        for band in Band::DETAILS {
            details.extend_from_slice(set.band(band).data());
        }
    }
    Ok(CorpusSummary {
        pixel_skewness: skewness(&pixels)?,
        pixel_excess_kurtosis: excess_kurtosis(&pixels)?,
        detail_skewness: skewness(&details)?,
        detail_excess_kurtosis: excess_kurtosis(&details)?,
        n_pixels: pixels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_names_each_threshold() {
        assert_eq!(
            scan_csv_header(&[0.1]),
            "scale,band,kl_divergence,skewness,excess_kurtosis,sparsity_t0.1,n_samples"
        );
        assert_eq!(
            scan_csv_header(&[0.05, 1.0]),
            "scale,band,kl_divergence,skewness,excess_kurtosis,sparsity_t0.05,sparsity_t1,n_samples"
        );
    }

    #[test]
    fn rows_are_scale_major() {
        let mut rng = Rng::new(2);
        let imgs: Vec<Tensor<f64>> = (0..4).map(|_| rng.randn(&[32, 32]).unwrap()).collect();
        let rows = subband_scan(&imgs, &ScanOptions::new(2, vec![0.5])).unwrap();
        let keys: Vec<(usize, &str)> = rows.iter().map(|r| (r.scale, r.band.name())).collect();
        assert_eq!(
            keys,
            vec![
                (1, "LL"),
                (1, "LH"),
                (1, "HL"),
                (1, "HH"),
                (2, "LL"),
                (2, "LH"),
                (2, "HL"),
                (2, "HH")
            ]
        );
        assert_eq!(rows[0].n_samples, 4 * 256);
        assert_eq!(rows[4].n_samples, 4 * 64);
    }

    #[test]
    fn invalid_inputs() {
        let imgs = vec![Tensor::<f64>::zeros(&[6, 6])];
        assert!(matches!(
            subband_scan(&imgs, &ScanOptions::new(2, vec![])),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            subband_scan(&imgs, &ScanOptions::new(0, vec![])),
            Err(Error::InvalidArgument(_))
        ));
    }
}
