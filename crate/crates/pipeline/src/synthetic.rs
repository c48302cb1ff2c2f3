//! A synthetic restoration task: piecewise-constant shape images and their
//! blurred versions.

use mscgm_core::{Result, Rng, Tensor};

use crate::dataset::{Pair, PairedDataset};
use crate::degrade::{apply_chain, Degradation};

/// Grayscale `size × size × 1` image of overlapping rectangles and discs on a
/// flat background, values in `[−1, 1]`.
pub fn shapes_image(size: usize, rng: &mut Rng) -> Tensor<f64> {
    let mut img = vec![rng.uniform() * 0.8 - 0.9; size * size];
    let n = rng.int_inclusive(3, 6);
    let s = size as f64;
    for _ in 0..n {
        let level = rng.uniform() * 2.0 - 1.0;
        let (cy, cx) = (rng.uniform() * s, rng.uniform() * s);
        let extent = s * (0.1 + 0.25 * rng.uniform());
        if rng.below(2) == 0 {
            let (hy, hx) = (extent * (0.5 + rng.uniform()), extent * (0.5 + rng.uniform()));
            for y in 0..size {
                for x in 0..size {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    if (py - cy).abs() <= hy / 2.0 && (px - cx).abs() <= hx / 2.0 {
                        img[y * size + x] = level;
                    }
                }
            }
        } else {
            for y in 0..size {
                for x in 0..size {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    if dy * dy + dx * dx <= extent * extent / 2.0 {
                        img[y * size + x] = level;
                    }
                }
            }
        }
    }
    Tensor::new(&[size, size, 1], img).expect("square image")
}

/// `count` pairs whose condition is the target passed through `chain`.
pub fn restoration_pairs(count: usize, size: usize, chain: &[Degradation], rng: &mut Rng) -> Result<Vec<Pair>> {
    (0..count)
        .map(|i| {
            let target = shapes_image(size, rng);
            let cond = apply_chain(&target, chain, rng)?;
            Ok(Pair {
                cond: cond.cast(),
                target: target.cast(),
                source: format!("synthetic #{i}"),
            })
        })
        .collect()
}

/// The desk restoration benchmark: 32×32 shapes blurred with σ = 1.5.
pub fn blur_task(count: usize, levels: usize, seed: u64) -> crate::error::Result<PairedDataset> {
    let mut rng = Rng::new(seed);
    let pairs = restoration_pairs(count, 32, &[Degradation::Blur { sigma: 1.5 }], &mut rng)?;
    PairedDataset::from_pairs(pairs, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_in_range_and_seeded() {
        let a = shapes_image(32, &mut Rng::new(3));
        let b = shapes_image(32, &mut Rng::new(3));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let distinct: std::collections::BTreeSet<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        assert!(distinct.len() >= 2);
    }

    #[test]
    fn blur_task_shapes() {
        let d = blur_task(5, 2, 0).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.extents(), Some((32, 32, 1)));
        assert_ne!(d.pairs()[0].cond, d.pairs()[0].target);
    }
}
