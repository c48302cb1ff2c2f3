//! Orthonormal 2-D Haar transform and its multi-level pyramid.
//!
//! Images are `H × W × C` tensors; channels are transformed independently.
//! Filters are `h = [1/√2, 1/√2]` (low-pass) and `g = [1/√2, −1/√2]`
//! (high-pass). Rows are filtered first, then columns, each followed by
//! stride-2 downsampling. The two `1/√2` factors of a separable 2×2 product
//! are applied together as an exact `1/2`, so integer inputs give exact
//! coefficients.
//!
//! Band naming: the first letter is the filter applied along each row
//! (horizontal direction), the second along each column.
//!
//! | band | along rows | along columns |
//! |------|------------|---------------|
//! | LL   | low        | low           |
//! | LH   | high       | low           |
//! | HL   | low        | high          |
//! | HH   | high       | high          |
//!
//! So for a 2×2 block `[[a, b], [c, d]]`: `LL = (a+b+c+d)/2`,
//! `LH = (a−b+c−d)/2`, `HL = (a+b−c−d)/2`, `HH = (a−b−c+d)/2`.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{hwc_extents, Tensor};

/// Band identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];
    pub const DETAILS: [Band; 3] = [Band::LH, Band::HL, Band::HH];

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::LH => "LH",
            Band::HL => "HL",
            Band::HH => "HH",
        }
    }
}

/// One level of decomposition: four bands of shape `(H/2, W/2, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<S> {
    pub ll: Tensor<S>,
    pub lh: Tensor<S>,
    pub hl: Tensor<S>,
    pub hh: Tensor<S>,
}

/// The three detail bands of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailBands<S> {
    pub lh: Tensor<S>,
    pub hl: Tensor<S>,
    pub hh: Tensor<S>,
}

impl<S: Scalar> DetailBands<S> {
    pub fn band(&self, band: Band) -> Option<&Tensor<S>> {
        match band {
            Band::LH => Some(&self.lh),
            Band::HL => Some(&self.hl),
            Band::HH => Some(&self.hh),
            Band::LL => None,
        }
    }

    pub fn energy(&self) -> S {
        self.lh.norm_sq() + self.hl.norm_sq() + self.hh.norm_sq()
    }

    /// Stacks the bands along the channel axis: `(h, w, 3C)` ordered LH, HL, HH.
    pub fn stack_channels(&self) -> Tensor<S> {
        let (h, w, c) = hwc_extents(&self.lh).expect("detail band is HWC");
        let mut out = Vec::with_capacity(3 * self.lh.numel());
        for p in 0..h * w {
            for band in [&self.lh, &self.hl, &self.hh] {
                out.extend_from_slice(&band.data()[p * c..(p + 1) * c]);
            }
        }
        Tensor::new(&[h, w, 3 * c], out).expect("stacked extents")
    }

    /// Inverse of [`DetailBands::stack_channels`].
    pub fn unstack_channels(stacked: &Tensor<S>) -> Result<Self> {
        let (h, w, c3) = hwc_extents(stacked)?;
        if c3 % 3 != 0 {
            return Err(shape_err!(
                "stacked detail tensor needs a multiple of 3 channels, got {c3}"
            ));
        }
        let c = c3 / 3;
        let mut bands = [
            Vec::with_capacity(h * w * c),
            Vec::with_capacity(h * w * c),
            Vec::with_capacity(h * w * c),
        ];
        for p in 0..h * w {
            for (b, dst) in bands.iter_mut().enumerate() {
                let start = p * c3 + b * c;
                dst.extend_from_slice(&stacked.data()[start..start + c]);
            }
        }
        let [lh, hl, hh] = bands;
        Ok(Self {
            lh: Tensor::new(&[h, w, c], lh)?,
            hl: Tensor::new(&[h, w, c], hl)?,
            hh: Tensor::new(&[h, w, c], hh)?,
        })
    }
}

impl<S: Scalar> SubbandSet<S> {
    pub fn from_parts(ll: Tensor<S>, details: DetailBands<S>) -> Self {
        Self {
            ll,
            lh: details.lh,
            hl: details.hl,
            hh: details.hh,
        }
    }

    pub fn into_parts(self) -> (Tensor<S>, DetailBands<S>) {
        (
            self.ll,
            DetailBands {
                lh: self.lh,
                hl: self.hl,
                hh: self.hh,
            },
        )
    }

    pub fn band(&self, band: Band) -> &Tensor<S> {
        match band {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> S {
        self.ll.norm_sq() + self.lh.norm_sq() + self.hl.norm_sq() + self.hh.norm_sq()
    }
}

/// Single-level analysis.
pub fn dwt2<S: Scalar>(image: &Tensor<S>) -> Result<SubbandSet<S>> {
    let (h, w, c) = hwc_extents(image)?;
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!(
            "Haar analysis needs even extents ≥ 2, got {h}×{w}"
        ));
    }
    let (h2, w2) = (h / 2, w / 2);
    let src = image.data();
    let half = S::from_f64(0.5);

    // Row pass: unnormalized sums/differences along x, then along y.
    let mut lo = vec![S::zero(); h * w2 * c];
    let mut hi = vec![S::zero(); h * w2 * c];
    for y in 0..h {
        for x in 0..w2 {
            for ch in 0..c {
                let a = src[(y * w + 2 * x) * c + ch];
                let b = src[(y * w + 2 * x + 1) * c + ch];
                lo[(y * w2 + x) * c + ch] = a + b;
                hi[(y * w2 + x) * c + ch] = a - b;
            }
        }
    }
    let n = h2 * w2 * c;
    let (mut ll, mut lh, mut hl, mut hh) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for y in 0..h2 {
        for x in 0..w2 {
            for ch in 0..c {
                let top = (2 * y * w2 + x) * c + ch;
                let bot = ((2 * y + 1) * w2 + x) * c + ch;
                ll.push((lo[top] + lo[bot]) * half);
                hl.push((lo[top] - lo[bot]) * half);
                lh.push((hi[top] + hi[bot]) * half);
                hh.push((hi[top] - hi[bot]) * half);
            }
        }
    }
    let shape = [h2, w2, c];
    Ok(SubbandSet {
        ll: Tensor::new(&shape, ll)?,
        lh: Tensor::new(&shape, lh)?,
        hl: Tensor::new(&shape, hl)?,
        hh: Tensor::new(&shape, hh)?,
    })
}

/// Single-level synthesis; exact inverse of [`dwt2`].
pub fn idwt2<S: Scalar>(bands: &SubbandSet<S>) -> Result<Tensor<S>> {
    let shape = bands.ll.shape();
    for (name, b) in [("LH", &bands.lh), ("HL", &bands.hl), ("HH", &bands.hh)] {
        if b.shape() != shape {
            return Err(shape_err!(
                "{name} band shape {:?} differs from LL shape {:?}",
                b.shape(),
                shape
            ));
        }
    }
    let (h2, w2, c) = hwc_extents(&bands.ll)?;
    let (h, w) = (2 * h2, 2 * w2);
    let half = S::from_f64(0.5);
    let (ll, lh, hl, hh) = (
        bands.ll.data(),
        bands.lh.data(),
        bands.hl.data(),
        bands.hh.data(),
    );
    let mut out = vec![S::zero(); h * w * c];
    for y in 0..h2 {
        for x in 0..w2 {
            for ch in 0..c {
                let i = (y * w2 + x) * c + ch;
                // Column synthesis recovers the row-pass outputs, then rows.
                let lo_top = ll[i] + hl[i];
                let lo_bot = ll[i] - hl[i];
                let hi_top = lh[i] + hh[i];
                let hi_bot = lh[i] - hh[i];
                out[(2 * y * w + 2 * x) * c + ch] = (lo_top + hi_top) * half;
                out[(2 * y * w + 2 * x + 1) * c + ch] = (lo_top - hi_top) * half;
                out[((2 * y + 1) * w + 2 * x) * c + ch] = (lo_bot + hi_bot) * half;
                out[((2 * y + 1) * w + 2 * x + 1) * c + ch] = (lo_bot - hi_bot) * half;
            }
        }
    }
    let out_shape = if bands.ll.ndim() == 2 {
        vec![h, w]
    } else {
        vec![h, w, c]
    };
    Tensor::new(&out_shape, out)
}

/// `S`-level decomposition obtained by re-transforming the LL band.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandPyramid<S> {
    pub coarse_ll: Tensor<S>,
    /// Detail triplets ordered coarse → fine: `details[0]` is level `S`,
    /// `details[S-1]` is level 1.
    pub details: Vec<DetailBands<S>>,
}

impl<S: Scalar> SubbandPyramid<S> {
    pub fn scales(&self) -> usize {
        self.details.len()
    }

    /// Detail bands at wavelet scale `k` (1 = finest).
    pub fn level(&self, k: usize) -> Option<&DetailBands<S>> {
        let s = self.scales();
        (1..=s).contains(&k).then(|| &self.details[s - k])
    }

    pub fn energy(&self) -> S {
        self.details
            .iter()
            .fold(self.coarse_ll.norm_sq(), |acc, d| acc + d.energy())
    }

    /// All coefficients flattened: coarse LL, then each level coarse → fine
    /// as LH, HL, HH.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = self.coarse_ll.data().to_vec();
        for d in &self.details {
            out.extend_from_slice(d.lh.data());
            out.extend_from_slice(d.hl.data());
            out.extend_from_slice(d.hh.data());
        }
        out
    }
}

pub fn check_divisible(h: usize, w: usize, levels: usize) -> Result<()> {
    let factor = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| shape_err!("{levels} levels is too many"))?;
    if h % factor != 0 || w % factor != 0 || h < factor || w < factor {
        return Err(shape_err!(
            "image extents {h}×{w} must be divisible by 2^{levels} = {factor}"
        ));
    }
    Ok(())
}

pub fn decompose<S: Scalar>(image: &Tensor<S>, levels: usize) -> Result<SubbandPyramid<S>> {
    if levels == 0 {
        return Err(crate::error::Error::InvalidArgument(
            "decomposition needs at least one level".into(),
        ));
    }
    let (h, w, _) = hwc_extents(image)?;
    check_divisible(h, w, levels)?;
    let mut current = image.clone();
    let mut fine_to_coarse = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (ll, details) = dwt2(&current)?.into_parts();
        fine_to_coarse.push(details);
        current = ll;
    }
    fine_to_coarse.reverse();
    Ok(SubbandPyramid {
        coarse_ll: current,
        details: fine_to_coarse,
    })
}

pub fn reconstruct<S: Scalar>(pyramid: &SubbandPyramid<S>) -> Result<Tensor<S>> {
    let mut current = pyramid.coarse_ll.clone();
    for d in &pyramid.details {
        let set = SubbandSet {
            ll: current,
            lh: d.lh.clone(),
            hl: d.hl.clone(),
            hh: d.hh.clone(),
        };
        current = idwt2(&set)?;
    }
    Ok(current)
}

/// The analysis operator as a dense `d × d` matrix on `h × w` single-channel
/// images, built column by column from unit-impulse responses. Rows follow
/// [`SubbandPyramid::flatten`] order.
pub fn analysis_matrix<S: Scalar>(h: usize, w: usize, levels: usize) -> Result<Tensor<S>> {
    let d = h * w;
    let mut a = vec![S::zero(); d * d];
    for j in 0..d {
        let impulse = Tensor::from_fn(&[h, w, 1], |i| if i == j { S::one() } else { S::zero() });
        let coeffs = decompose(&impulse, levels)?.flatten();
        for (i, v) in coeffs.into_iter().enumerate() {
            a[i * d + j] = v;
        }
    }
    Tensor::new(&[d, d], a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::Rng;

    fn img(h: usize, w: usize, values: &[f64]) -> Tensor<f64> {
        Tensor::new(&[h, w, 1], values.to_vec()).unwrap()
    }

    #[test]
    fn hand_example_is_exact() {
        let bands = dwt2(&img(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(bands.ll.data(), &[5.0]);
        assert_eq!(bands.lh.data(), &[-1.0]);
        assert_eq!(bands.hl.data(), &[-2.0]);
        assert_eq!(bands.hh.data(), &[0.0]);
        assert_eq!(idwt2(&bands).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let v = 0.37;
        let bands = dwt2(&img(2, 2, &[v; 4])).unwrap();
        assert_eq!(bands.ll.data(), &[2.0 * v]);
        for b in [&bands.lh, &bands.hl, &bands.hh] {
            assert_eq!(b.data(), &[0.0]);
        }
    }

    #[test]
    fn constant_pyramid_collapses_to_eight_v() {
        let v = 1.25;
        let p = decompose(&Tensor::full(&[8, 8, 1], v), 3).unwrap();
        assert_eq!(p.coarse_ll.shape(), &[1, 1, 1]);
        assert!((p.coarse_ll.data()[0] - 8.0 * v).abs() < 1e-12);
        for d in &p.details {
            assert_eq!(d.energy(), 0.0);
        }
    }

    #[test]
    fn odd_and_mismatched_shapes_are_rejected() {
        let odd = Tensor::<f64>::zeros(&[2, 3, 1]);
        assert!(matches!(dwt2(&odd), Err(Error::InvalidShape(_))));
        let mut bands = dwt2(&Tensor::<f64>::zeros(&[4, 4, 1])).unwrap();
        bands.hh = Tensor::zeros(&[1, 2, 1]);
        assert!(matches!(idwt2(&bands), Err(Error::InvalidShape(_))));
        assert!(matches!(
            decompose(&Tensor::<f64>::zeros(&[12, 12, 1]), 3),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn zero_bands_give_zero_image() {
        let z = Tensor::<f64>::zeros(&[3, 3, 2]);
        let bands = SubbandSet {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        };
        assert_eq!(idwt2(&bands).unwrap(), Tensor::zeros(&[6, 6, 2]));
    }

    #[test]
    fn single_level_pyramid_is_dwt2() {
        let x: Tensor<f64> = Rng::new(1).randn(&[8, 6, 2]).unwrap();
        let p = decompose(&x, 1).unwrap();
        let s = dwt2(&x).unwrap();
        assert_eq!(p.coarse_ll, s.ll);
        assert_eq!(p.details[0].lh, s.lh);
        assert_eq!(p.details[0].hh, s.hh);
    }

    #[test]
    fn pyramid_levels_shrink_coarse_to_fine() {
        let x: Tensor<f64> = Rng::new(2).randn(&[32, 16, 1]).unwrap();
        let p = decompose(&x, 3).unwrap();
        for k in 0..2 {
            let a = p.details[k].lh.shape();
            let b = p.details[k + 1].lh.shape();
            assert_eq!(2 * a[0], b[0]);
            assert_eq!(2 * a[1], b[1]);
        }
        assert_eq!(p.level(1).unwrap().lh.shape(), &[16, 8, 1]);
    }

    #[test]
    fn stacked_details_round_trip() {
        let x: Tensor<f64> = Rng::new(3).randn(&[8, 8, 3]).unwrap();
        let (_, d) = dwt2(&x).unwrap().into_parts();
        let s = d.stack_channels();
        assert_eq!(s.shape(), &[4, 4, 9]);
        assert_eq!(DetailBands::unstack_channels(&s).unwrap(), d);
    }

    #[test]
    fn analysis_matrix_is_orthogonal() {
        for levels in [1, 2] {
            let a = analysis_matrix::<f64>(4, 4, levels).unwrap();
            let d = 16;
            for i in 0..d {
                for j in 0..d {
                    let dot: f64 = (0..d).map(|k| a.data()[i * d + k] * a.data()[j * d + k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() <= 1e-10);
                }
            }
        }
    }
}
