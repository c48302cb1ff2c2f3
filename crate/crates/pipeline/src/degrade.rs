//! Synthetic degradations used to build conditional images.

use std::fmt;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use mscgm_core::tensor::hwc_extents;
use mscgm_core::{Error, Result, Rng, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    /// Block-average downsampling followed by bilinear upsampling.
    BoxDown { factor: usize },
    /// Bicubic downsampling followed by bilinear upsampling.
    BicubicDown { factor: usize },
    /// Gaussian blur with reflecting borders.
    Blur { sigma: f64 },
    /// Additive white Gaussian noise.
    Noise { std: f64 },
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::BoxDown { factor } => write!(f, "box:{factor}"),
            Degradation::BicubicDown { factor } => write!(f, "bicubic:{factor}"),
            Degradation::Blur { sigma } => write!(f, "blur:{sigma}"),
            Degradation::Noise { std } => write!(f, "noise:{std}"),
        }
    }
}

impl FromStr for Degradation {
    type Err = Error;

    /// `blur:1.5`, `noise:0.05`, `box:2` or `bicubic:4`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse degradation '{s}'"));
        let (kind, arg) = s.trim().split_once(':').ok_or_else(bad)?;
        let d = match kind {
            "blur" => Degradation::Blur {
                sigma: arg.parse().map_err(|_| bad())?,
            },
            "noise" => Degradation::Noise {
                std: arg.parse().map_err(|_| bad())?,
            },
            "box" => Degradation::BoxDown {
                factor: arg.parse().map_err(|_| bad())?,
            },
            "bicubic" => Degradation::BicubicDown {
                factor: arg.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Parses a comma-separated chain such as `blur:2,noise:0.05`.
pub fn parse_chain(s: &str) -> Result<Vec<Degradation>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

impl Degradation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Degradation::BoxDown { factor } | Degradation::BicubicDown { factor } => factor >= 1,
            Degradation::Blur { sigma } => sigma > 0.0 && sigma.is_finite(),
            Degradation::Noise { std } => std >= 0.0 && std.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid degradation parameters: {self}")))
        }
    }

    pub fn apply(&self, img: &Tensor<f64>, rng: &mut Rng) -> Result<Tensor<f64>> {
        self.validate()?;
        match *self {
            Degradation::BoxDown { factor } => box_down_up(img, factor),
            Degradation::BicubicDown { factor } => bicubic_down_up(img, factor),
            Degradation::Blur { sigma } => gaussian_blur(img, sigma),
            Degradation::Noise { std } => {
                let noise: Tensor<f64> = rng.randn(img.shape())?;
                let mut out = img.clone();
                out.axpy(std, &noise)?;
                Ok(out)
            }
        }
    }
}

pub fn apply_chain(img: &Tensor<f64>, chain: &[Degradation], rng: &mut Rng) -> Result<Tensor<f64>> {
    chain.iter().try_fold(img.clone(), |acc, d| d.apply(&acc, rng))
}

/// Half-sample symmetric reflection of an index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Separable Gaussian blur with kernel radius `⌈3σ⌉`.
pub fn gaussian_blur(img: &Tensor<f64>, sigma: f64) -> Result<Tensor<f64>> {
    let (h, w, c) = hwc_extents(img)?;
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.into_iter().map(|t| t / total).collect();
    let src = img.data();
    let mut rows = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - radius, w);
                    acc += t * src[(y * w + xx) * c + ch];
                }
                rows[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let yy = reflect(y as isize + k as isize - radius, h);
                    acc += t * rows[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Tensor::new(img.shape(), out)
}

/// One channel mapped to `[0, 1]`, the range `image` clamps float pixels to.
fn plane(img: &Tensor<f64>, ch: usize) -> ImageBuffer<Luma<f32>, Vec<f32>> {
    let (h, w, c) = hwc_extents(img).expect("checked by caller");
    let raw = (0..h * w).map(|p| ((img.data()[p * c + ch] + 1.0) * 0.5) as f32).collect();
    ImageBuffer::from_raw(w as u32, h as u32, raw).expect("plane sized from the tensor")
}

fn resize_channels(
    img: &Tensor<f64>,
    nw: usize,
    nh: usize,
    filter: FilterType,
) -> Result<Tensor<f64>> {
    let (_, _, c) = hwc_extents(img)?;
    let mut out = vec![0.0; nh * nw * c];
    for ch in 0..c {
        let r = imageops::resize(&plane(img, ch), nw as u32, nh as u32, filter);
        for (p, v) in r.as_raw().iter().enumerate() {
            out[p * c + ch] = *v as f64 * 2.0 - 1.0;
        }
    }
    Tensor::new(&[nh, nw, c], out)
}

fn check_factor(h: usize, w: usize, factor: usize) -> Result<()> {
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidShape(format!(
            "{h}×{w} image is not divisible by the downsampling factor {factor}"
        )));
    }
    Ok(())
}

fn box_down_up(img: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    let (h, w, c) = hwc_extents(img)?;
    check_factor(h, w, factor)?;
    let (sh, sw) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let small = Tensor::from_fn(&[sh, sw, c], |i| {
        let (p, ch) = (i / c, i % c);
        let (y, x) = (p / sw, p % sw);
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.data()[((y * factor + dy) * w + x * factor + dx) * c + ch];
            }
        }
        acc * inv
    });
    resize_channels(&small, w, h, FilterType::Triangle)
}

fn bicubic_down_up(img: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    let (h, w, _) = hwc_extents(img)?;
    check_factor(h, w, factor)?;
    let small = resize_channels(img, w / factor, h / factor, FilterType::CatmullRom)?;
    resize_channels(&small, w, h, FilterType::Triangle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        let chain = parse_chain("blur:2, noise:0.05,box:2,bicubic:4").unwrap();
        assert_eq!(chain.len(), 4);
        assert_eq!(chain[0], Degradation::Blur { sigma: 2.0 });
        let text: Vec<String> = chain.iter().map(|d| d.to_string()).collect();
        assert_eq!(text.join(","), "blur:2,noise:0.05,box:2,bicubic:4");
        assert!(parse_chain("blur:-1").is_err());
        assert!(parse_chain("sharpen:1").is_err());
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let c = Tensor::full(&[9, 7, 2], 0.3);
        let b = gaussian_blur(&c, 1.5).unwrap();
        assert!(b.max_abs_diff(&c).unwrap() < 1e-12);
        let mut rng = Rng::new(1);
        let x: Tensor<f64> = rng.randn(&[16, 16, 1]).unwrap();
        let bx = gaussian_blur(&x, 2.0).unwrap();
        assert!(bx.norm_sq() < x.norm_sq());
    }

    #[test]
    fn reflection_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn resampling_keeps_shape_and_constants() {
        let c = Tensor::full(&[8, 12, 3], -0.25);
        for d in [Degradation::BoxDown { factor: 2 }, Degradation::BicubicDown { factor: 4 }] {
            let out = d.apply(&c, &mut Rng::new(0)).unwrap();
            assert_eq!(out.shape(), c.shape());
            assert!(out.max_abs_diff(&c).unwrap() < 1e-6);
        }
        assert!(Degradation::BoxDown { factor: 3 }.apply(&c, &mut Rng::new(0)).is_err());
    }
}
