//! Synthetic image corpora with known statistical structure.
//!
//! * white noise: i.i.d. standard normal pixels;
//! * power-law field: lognormal intensities `exp(g)` of a stationary
//!   Gaussian field `g` with correlation `C(d) = (1 + α d)^{−β}`;
//! * sparse beads: a few point emitters blurred by a Gaussian PSF over a
//!   dark background, plus detector noise.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn white_noise_corpus(count: usize, height: usize, width: usize, rng: &mut Rng) -> Result<Vec<Tensor<f64>>> {
    (0..count).map(|_| rng.randn(&[height, width])).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PowerLawParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Samples `size × size` crops of a stationary Gaussian field by circulant
/// embedding on a `2·size` torus.
pub struct PowerLawField {
    size: usize,
    torus: usize,
    sqrt_spectrum: Vec<f64>,
    planner: FftPlanner<f64>,
}

impl PowerLawField {
    pub fn new(size: usize, params: PowerLawParams) -> Result<Self> {
        if size == 0 || !(params.alpha > 0.0) || !(params.beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power-law field needs size > 0 and positive α, β; got {size}, {params:?}"
            )));
        }
        let m = 2 * size;
        let mut cov: Vec<Complex<f64>> = (0..m * m)
            .map(|i| {
                let (y, x) = (i / m, i % m);
                let dy = y.min(m - y) as f64;
                let dx = x.min(m - x) as f64;
                let d = (dx * dx + dy * dy).sqrt();
                Complex::new((1.0 + params.alpha * d).powf(-params.beta), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        fft2(&mut planner, &mut cov, m, false);
        // The embedding is not guaranteed PD; drop the small negative modes.
        let sqrt_spectrum = cov.iter().map(|c| c.re.max(0.0).sqrt()).collect();
        Ok(Self {
            size,
            torus: m,
            sqrt_spectrum,
            planner,
        })
    }

    /// One zero-mean field crop, approximately unit variance.
    pub fn sample_gaussian(&mut self, rng: &mut Rng) -> Tensor<f64> {
        let m = self.torus;
        let mut buf: Vec<Complex<f64>> = self
            .sqrt_spectrum
            .iter()
            .map(|&s| Complex::new(s * rng.normal(), s * rng.normal()))
            .collect();
        fft2(&mut self.planner, &mut buf, m, true);
        let n = self.size;
        let scale = 1.0 / m as f64;
        Tensor::from_fn(&[n, n], |i| buf[(i / n) * m + i % n].re * scale)
    }

    /// Lognormal intensities `exp(g / std(g))`.
    pub fn sample_lognormal(&mut self, rng: &mut Rng) -> Tensor<f64> {
        let g = self.sample_gaussian(rng);
        let n = g.numel() as f64;
        let mean = g.sum() / n;
        let std = (g.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        g.map(|v| (v / std).exp())
    }
}

fn fft2(planner: &mut FftPlanner<f64>, buf: &mut [Complex<f64>], m: usize, inverse: bool) {
    let fft = if inverse {
        planner.plan_fft_inverse(m)
    } else {
        planner.plan_fft_forward(m)
    };
    for row in buf.chunks_exact_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); m];
    for x in 0..m {
        for y in 0..m {
            col[y] = buf[y * m + x];
        }
        fft.process(&mut col);
        for y in 0..m {
            buf[y * m + x] = col[y];
        }
    }
}

pub fn power_law_corpus(count: usize, size: usize, params: PowerLawParams, rng: &mut Rng) -> Result<Vec<Tensor<f64>>> {
    let mut field = PowerLawField::new(size, params)?;
    Ok((0..count).map(|_| field.sample_lognormal(rng)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeParams {
    pub beads: usize,
    pub psf_sigma: f64,
    pub noise_std: f64,
    pub amplitude: (f64, f64),
}

impl Default for SpikeParams {
    fn default() -> Self {
        Self {
            beads: 3,
            psf_sigma: 4.0,
            noise_std: 0.1,
            amplitude: (0.5, 1.0),
        }
    }
}

/// Bead image on a periodic `size × size` grid; each bead's PSF peaks at
/// its amplitude.
pub fn spike_image(size: usize, params: &SpikeParams, rng: &mut Rng) -> Result<Tensor<f64>> {
    if size == 0 || !(params.psf_sigma > 0.0) || params.noise_std < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid bead image parameters: size {size}, {params:?}"
        )));
    }
    let mut img = vec![0.0; size * size];
    let two_var = 2.0 * params.psf_sigma * params.psf_sigma;
    for _ in 0..params.beads {
        let by = rng.below(size);
        let bx = rng.below(size);
        let (lo, hi) = params.amplitude;
        let amp = lo + (hi - lo) * rng.uniform();
        for y in 0..size {
            let dy = y.abs_diff(by).min(size - y.abs_diff(by)) as f64;
            for x in 0..size {
                let dx = x.abs_diff(bx).min(size - x.abs_diff(bx)) as f64;
                img[y * size + x] += amp * (-(dx * dx + dy * dy) / two_var).exp();
            }
        }
    }
    for v in img.iter_mut() {
        *v += params.noise_std * rng.normal();
    }
    Tensor::new(&[size, size], img)
}

pub fn spike_corpus(count: usize, size: usize, params: &SpikeParams, rng: &mut Rng) -> Result<Vec<Tensor<f64>>> {
    (0..count).map(|_| spike_image(size, params, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::distribution::mean_std;

    #[test]
    fn field_has_the_embedded_correlation() {
        let mut field = PowerLawField::new(16, PowerLawParams::default()).unwrap();
        let mut rng = Rng::new(3);
        let (mut var, mut lag1, mut n) = (0.0, 0.0, 0.0);
        for _ in 0..2000 {
            let g = field.sample_gaussian(&mut rng);
            let d = g.data();
            for y in 0..16 {
                for x in 0..15 {
                    var += d[y * 16 + x] * d[y * 16 + x];
                    lag1 += d[y * 16 + x] * d[y * 16 + x + 1];
                    n += 1.0;
                }
            }
        }
        // C(0) = 1, C(1) = 1/2 with α = β = 1.
        assert!((var / n - 1.0).abs() < 0.05, "variance {}", var / n);
        assert!((lag1 / n - 0.5).abs() < 0.05, "lag-1 {}", lag1 / n);
    }

    #[test]
    fn bead_images_are_mostly_background() {
        let params = SpikeParams {
            noise_std: 0.0,
            ..SpikeParams::default()
        };
        let img = spike_image(64, &params, &mut Rng::new(0)).unwrap();
        let peak = img.data().iter().cloned().fold(0.0, f64::max);
        assert!(peak >= 0.5 && peak <= 3.0);
        let dark = img.data().iter().filter(|&&v| v < 0.01).count();
        assert!(dark > 64 * 64 / 2);
        let (_, std) = mean_std(white_noise_corpus(1, 32, 32, &mut Rng::new(1)).unwrap()[0].data());
        assert!((std - 1.0).abs() < 0.15);
    }
}
