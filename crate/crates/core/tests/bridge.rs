use mscgm_core::bbdp::{
    forward_sample, make_schedule, one_step_forward, reverse_step, sample, sample_counted,
    training_target,
};
use mscgm_core::{Error, Rng, Tensor, TimestepGrid};
use proptest::prelude::*;

fn scalar(v: f64) -> Tensor<f64> {
    Tensor::scalar(v)
}

/// Posterior mean written with x0 explicit.
fn posterior_mean_explicit(m: &[f64], delta: &[f64], t: usize, xt: f64, x0: f64, y: f64) -> f64 {
    let (mt, mp) = (m[t], m[t - 1]);
    let (dt, dp) = (delta[t], delta[t - 1]);
    let dts = dt - dp * ((1.0 - mt) / (1.0 - mp)).powi(2);
    let shrink = dp / dt * (1.0 - mt) / (1.0 - mp);
    shrink * xt + (1.0 - mp) * dts / dt * x0 + (mp - mt * shrink) * y
}

#[test]
fn chained_one_step_kernels_reproduce_the_marginal() {
    let draws = 100_000;
    for big_t in [4usize, 10] {
        let sched = make_schedule(big_t).unwrap();
        let (x0, y) = (0.4, -1.3);
        let mut rng = Rng::new(11 + big_t as u64);
        let mut x = Tensor::full(&[draws], x0);
        let yv = Tensor::full(&[draws], y);
        for t in 1..=big_t {
            let eps = rng.randn(&[draws]).unwrap();
            x = one_step_forward(&sched, &x, &yv, t, &eps).unwrap();
            let n = draws as f64;
            let mean = x.sum() / n;
            let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let want_mean = (1.0 - sched.m[t]) * x0 + sched.m[t] * y;
            let want_var = sched.delta[t];
            let se_mean = (want_var / n).sqrt();
            // Var of the sample variance of a normal: 2σ⁴/(n−1).
            let se_var = (2.0 * want_var * want_var / (n - 1.0)).sqrt();
            assert!(
                (mean - want_mean).abs() <= 3.0 * se_mean + 1e-9,
                "T={big_t} t={t}: mean {mean} vs {want_mean}"
            );
            assert!(
                (var - want_var).abs() <= 3.0 * se_var + 1e-9,
                "T={big_t} t={t}: var {var} vs {want_var}"
            );
        }
    }
}

#[test]
fn coefficient_form_equals_explicit_posterior() {
    let mut rng = Rng::new(5);
    for _ in 0..10_000 {
        let big_t = 2 + rng.below(999);
        let t = 1 + rng.below(big_t - 1);
        let sched = make_schedule(big_t).unwrap();
        let (x0, y, e) = (rng.normal(), rng.normal(), rng.normal());
        let xt = forward_sample(&sched, &scalar(x0), &scalar(y), t, &scalar(e)).unwrap().data()[0];
        // The exact noise target: x_t − x0.
        let eps_hat = xt - x0;
        let got = sched.c_x[t] * xt + sched.c_y[t] * y - sched.c_eps[t] * eps_hat;
        let want = posterior_mean_explicit(&sched.m, &sched.delta, t, xt, x0, y);
        assert!((got - want).abs() <= 1e-10, "T={big_t} t={t}: {got} vs {want}");
    }
}

#[test]
fn posterior_matches_numerical_bayes_on_a_grid() {
    let big_t = 10;
    let sched = make_schedule(big_t).unwrap();
    let (x0, y) = (0.3, -0.8);
    let normal_pdf = |x: f64, mean: f64, var: f64| (-(x - mean).powi(2) / (2.0 * var)).exp();
    for t in 2..big_t {
        for &xt in &[-1.0, -0.2, 0.5] {
            let (a, b) = sched.forward_coefficients(t, t - 1);
            let prior_mean = (1.0 - sched.m[t - 1]) * x0 + sched.m[t - 1] * y;
            let prior_var = sched.delta[t - 1];
            let (lo, hi, n) = (-6.0, 6.0, 120_001);
            let h = (hi - lo) / (n - 1) as f64;
            let (mut z, mut first) = (0.0, 0.0);
            for i in 0..n {
                let u = lo + i as f64 * h;
                let w = normal_pdf(xt, a * u + b * y, sched.delta_step[t]) * normal_pdf(u, prior_mean, prior_var);
                z += w;
                first += w * u;
            }
            let numeric = first / z;
            let closed = posterior_mean_explicit(&sched.m, &sched.delta, t, xt, x0, y);
            assert!((numeric - closed).abs() <= 1e-3, "t={t} xt={xt}: {numeric} vs {closed}");
            let via_eps = sched.c_x[t] * xt + sched.c_y[t] * y - sched.c_eps[t] * (xt - x0);
            assert!((numeric - via_eps).abs() <= 1e-3);
        }
    }
}

#[test]
fn oracle_predictor_recovers_the_target() {
    let big_t = 1000;
    let sched = make_schedule(big_t).unwrap();
    let mut rng = Rng::new(9);
    let x0: Tensor<f64> = rng.rand_uniform(&[8, 8, 1], -1.0, 1.0).unwrap();
    let y: Tensor<f64> = rng.rand_uniform(&[8, 8, 1], -1.0, 1.0).unwrap();
    let mut oracle = |xt: &Tensor<f64>, _: &Tensor<f64>, _: usize, _: f64| xt.sub(&x0);
    let grid = TimestepGrid::full(big_t).unwrap();
    let (out, counters) = sample_counted(&sched, &mut oracle, &y, &grid, &mut rng).unwrap();
    assert!(out.max_abs_diff(&x0).unwrap() <= 1e-6);
    assert_eq!(counters.predictor_calls, big_t);
    assert_eq!(counters.pixel_ops(), big_t * 64);

    let short = TimestepGrid::uniform(big_t, 4).unwrap();
    let out4 = sample(&sched, &mut oracle, &y, &short, &mut rng).unwrap();
    assert!(out4.max_abs_diff(&x0).unwrap() <= 1e-6);
}

#[test]
fn sampler_is_deterministic_per_seed() {
    let sched = make_schedule(50).unwrap();
    let y = Tensor::<f64>::from_fn(&[4, 4, 1], |i| i as f64 / 16.0);
    let mut half = |xt: &Tensor<f64>, _: &Tensor<f64>, _: usize, _: f64| Ok(xt.scale(0.5));
    let grid = TimestepGrid::uniform(50, 10).unwrap();
    let a = sample(&sched, &mut half, &y, &grid, &mut Rng::new(4)).unwrap();
    let b = sample(&sched, &mut half, &y, &grid, &mut Rng::new(4)).unwrap();
    let c = sample(&sched, &mut half, &y, &grid, &mut Rng::new(5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn reverse_step_rejects_mismatched_prediction() {
    let sched = make_schedule(5).unwrap();
    let x = Tensor::<f64>::zeros(&[2, 2]);
    let e = Tensor::<f64>::zeros(&[4]);
    assert!(matches!(
        reverse_step(&sched, &x, &x, 3, &e, None),
        Err(Error::InvalidShape(_))
    ));
}

proptest! {
    #[test]
    fn forward_marginal_is_pinned(big_t in 2usize..500, x0 in -5.0f64..5.0, y in -5.0f64..5.0, e in -4.0f64..4.0) {
        let sched = make_schedule(big_t).unwrap();
        let at0 = forward_sample(&sched, &scalar(x0), &scalar(y), 0, &scalar(e)).unwrap();
        let at_t = forward_sample(&sched, &scalar(x0), &scalar(y), big_t, &scalar(e)).unwrap();
        prop_assert_eq!(at0.data()[0], x0);
        prop_assert_eq!(at_t.data()[0], y);
    }

    #[test]
    fn posterior_variance_is_nonnegative(big_t in 2usize..2000) {
        let sched = make_schedule(big_t).unwrap();
        for t in 1..=big_t {
            prop_assert!(sched.delta_post[t] >= 0.0);
            prop_assert!(sched.delta_step[t] >= 0.0);
            prop_assert!(sched.delta[t] <= 0.25 + 1e-15);
        }
    }

    #[test]
    fn target_reconstructs_x0(big_t in 2usize..300, frac in 0.0f64..1.0, x0 in -3.0f64..3.0, y in -3.0f64..3.0, e in -3.0f64..3.0) {
        let sched = make_schedule(big_t).unwrap();
        let t = 1 + ((big_t - 1) as f64 * frac) as usize;
        let xt = forward_sample(&sched, &scalar(x0), &scalar(y), t, &scalar(e)).unwrap();
        let tgt = training_target(&sched, &scalar(x0), &scalar(y), t, &scalar(e)).unwrap();
        prop_assert!((xt.data()[0] - tgt.data()[0] - x0).abs() < 1e-12);
    }
}
