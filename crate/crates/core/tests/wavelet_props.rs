use mscgm_core::wavelet::{analysis_matrix, decompose, dwt2, idwt2, reconstruct, Band, DetailBands};
use mscgm_core::{Error, Rng, Tensor};
use proptest::prelude::*;

fn image(seed: u64, h: usize, w: usize, c: usize) -> Tensor<f64> {
    Rng::new(seed).rand_uniform(&[h, w, c], -1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pyramid_is_lossless(seed in any::<u64>(), levels in 1usize..=4, hm in 1usize..=4, wm in 1usize..=4, c in 1usize..=3) {
        let (h, w) = (hm << levels, wm << levels);
        let img = image(seed, h, w, c);
        let pyr = decompose(&img, levels).unwrap();
        let back = reconstruct(&pyr).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() <= 1e-12);
        let e_in = img.norm_sq();
        prop_assert!((pyr.energy() - e_in).abs() <= 1e-12 * e_in);
    }

    #[test]
    fn single_level_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = image(seed, 8, 6, 2);
        let y = image(seed.wrapping_add(1), 8, 6, 2);
        let mut combo = x.scale(a);
        combo.axpy(b, &y).unwrap();
        let (sx, sy, sc) = (dwt2(&x).unwrap(), dwt2(&y).unwrap(), dwt2(&combo).unwrap());
        for band in Band::ALL {
            let mut want = sx.band(band).scale(a);
            want.axpy(b, sy.band(band)).unwrap();
            prop_assert!(sc.band(band).max_abs_diff(&want).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn single_level_round_trip(seed in any::<u64>(), hm in 1usize..=8, wm in 1usize..=8) {
        let img = image(seed, 2 * hm, 2 * wm, 1);
        let back = idwt2(&dwt2(&img).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() <= 1e-12);
    }

    #[test]
    fn detail_stacking_round_trips(seed in any::<u64>(), c in 1usize..=3) {
        let img = image(seed, 8, 8, c);
        let (_, details) = dwt2(&img).unwrap().into_parts();
        let stacked = details.stack_channels();
        prop_assert_eq!(stacked.shape(), &[4, 4, 3 * c][..]);
        prop_assert_eq!(DetailBands::unstack_channels(&stacked).unwrap(), details);
    }
}

#[test]
fn constant_image_has_no_detail() {
    let img = Tensor::<f64>::full(&[16, 16], 0.75);
    let pyr = decompose(&img, 3).unwrap();
    for k in 1..=3 {
        let level = pyr.level(k).unwrap();
        assert_eq!(level.energy(), 0.0);
    }
    // LL gains a factor 2 per level.
    assert!(pyr.coarse_ll.data().iter().all(|&v| (v - 6.0).abs() < 1e-12));
}

#[test]
fn analysis_matrix_is_orthogonal_for_three_levels() {
    let a = analysis_matrix::<f64>(8, 8, 3).unwrap();
    let d = 64;
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|k| a.data()[i * d + k] * a.data()[j * d + k]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn indivisible_inputs_are_rejected() {
    let img = Tensor::<f64>::zeros(&[12, 12, 1]);
    assert!(decompose(&img, 2).is_ok());
    assert!(matches!(decompose(&img, 3), Err(Error::InvalidShape(_))));
    assert!(matches!(dwt2(&Tensor::<f64>::zeros(&[3, 4])), Err(Error::InvalidShape(_))));
}

#[test]
fn float32_round_trip() {
    let img: Tensor<f32> = Rng::new(1).rand_uniform(&[32, 32, 3], -1.0, 1.0).unwrap();
    let back = reconstruct(&decompose(&img, 4).unwrap()).unwrap();
    assert!(back.max_abs_diff(&img).unwrap() <= 1e-5);
}
