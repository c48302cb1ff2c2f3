//! Built-in invariant suites run by `mscgm verify`.

use std::fmt::Write as _;
use std::str::FromStr;

use mscgm_core::bbdp::{forward_sample, make_schedule, one_step_forward, sample_counted};
use mscgm_core::linalg::{identity, matmul, transpose};
use mscgm_core::stats::duality_check;
use mscgm_core::wavelet::{analysis_matrix, decompose, dwt2, idwt2, reconstruct};
use mscgm_core::{Result, Rng, Tensor, TimestepGrid};
use mscgm_nn::gradcheck::{check_builder, check_layer_kind, Builder, LayerKind, DEFAULT_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    Wavelet,
    Bbdp,
    Grad,
    Duality,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["all", "wavelet", "bbdp", "grad", "duality"];

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "all" => Suite::All,
            "wavelet" => Suite::Wavelet,
            "bbdp" => Suite::Bbdp,
            "grad" => Suite::Grad,
            "duality" => Suite::Duality,
            _ => return Err(format!("unknown suite '{s}', expected one of {}", Suite::NAMES.join("|"))),
        })
    }
}

/// One checked invariant: the worst observed value against its bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(suite: &'static str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

pub fn report_csv(checks: &[Check]) -> String {
    let mut out = String::from("suite,check,passed,value,tolerance\n");
    for c in checks {
        writeln!(out, "{},{},{},{:e},{:e}", c.suite, c.name, c.passed, c.value, c.tolerance).unwrap();
    }
    out
}

pub fn run(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    if suite.includes(Suite::Wavelet) {
        checks.extend(wavelet(seed)?);
    }
    if suite.includes(Suite::Bbdp) {
        checks.extend(bbdp(seed)?);
    }
    if suite.includes(Suite::Grad) {
        checks.extend(grad(seed)?);
    }
    if suite.includes(Suite::Duality) {
        checks.extend(duality(seed)?);
    }
    Ok(checks)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn wavelet(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed).derive(10);
    let (mut recon, mut energy, mut linear) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..40 {
        let levels = 1 + i % 4;
        let unit = 1 << levels;
        let h = unit * rng.int_inclusive(1, 64 / unit);
        let w = unit * rng.int_inclusive(1, 64 / unit);
        let c = rng.int_inclusive(1, 3);
        let x: Tensor<f64> = rng.randn(&[h, w, c])?;
        let p = decompose(&x, levels)?;
        recon = recon.max(reconstruct(&p)?.max_abs_diff(&x)?);
        energy = energy.max(rel(p.energy(), x.norm_sq()));
        let y: Tensor<f64> = rng.randn(&[h, w, c])?;
        let (a, b) = (rng.normal(), rng.normal());
        let mut combo = x.scale(a);
        combo.axpy(b, &y)?;
        let lhs = decompose(&combo, levels)?.flatten();
        let (px, py) = (p.flatten(), decompose(&y, levels)?.flatten());
        for ((l, u), v) in lhs.iter().zip(&px).zip(&py) {
            linear = linear.max((l - (a * u + b * v)).abs());
        }
    }
    let a = analysis_matrix::<f64>(4, 4, 2)?;
    let gram = matmul(&a, &transpose(&a)?)?;
    let ortho = gram.max_abs_diff(&identity(16))?;
    let hand = Tensor::<f64>::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0])?;
    let set = dwt2(&hand)?;
    let got = [set.ll.data()[0], set.lh.data()[0], set.hl.data()[0], set.hh.data()[0]];
    let want: [f64; 4] = [5.0, -1.0, -2.0, 0.0];
    let hand_err = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let hand_back = idwt2(&set)?.max_abs_diff(&hand)?;
    Ok(vec![
        Check::at_most("wavelet", "perfect_reconstruction", recon, 1e-6),
        Check::at_most("wavelet", "energy_conservation", energy, 1e-9),
        Check::at_most("wavelet", "linearity", linear, 1e-9),
        Check::at_most("wavelet", "orthogonality", ortho, 1e-10),
        Check::at_most("wavelet", "haar_hand_example", hand_err.max(hand_back), 1e-12),
    ])
}

fn bbdp(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed).derive(20);
    // Chained one-step kernels against the closed-form marginal, measured in
    // standard errors.
    let draws = 100_000;
    let mut worst_se = 0.0f64;
    for big_t in [4usize, 10] {
        let sched = make_schedule(big_t)?;
        let (x0, y) = (0.4, -1.3);
        let mut x = Tensor::full(&[draws], x0);
        let yv = Tensor::full(&[draws], y);
        for t in 1..=big_t {
            let eps = rng.randn(&[draws])?;
            x = one_step_forward(&sched, &x, &yv, t, &eps)?;
            let n = draws as f64;
            let mean = x.sum() / n;
            let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let want_var = sched.delta[t];
            let se_mean = (want_var / n).sqrt().max(1e-300);
            let se_var = (2.0 * want_var * want_var / (n - 1.0)).sqrt().max(1e-300);
            let want_mean = (1.0 - sched.m[t]) * x0 + sched.m[t] * y;
            let dm = (mean - want_mean).abs();
            let dv = (var - want_var).abs();
            // Exact-zero variance at t = T makes both deviations vanish.
            let m_se = if dm < 1e-9 { 0.0 } else { dm / se_mean };
            let v_se = if dv < 1e-9 { 0.0 } else { dv / se_var };
            worst_se = worst_se.max(m_se).max(v_se);
        }
    }
    // Posterior coefficients against the posterior mean written with x0.
    let mut posterior = 0.0f64;
    for _ in 0..10_000 {
        let big_t = 2 + rng.below(999);
        let t = 1 + rng.below(big_t - 1);
        let s = make_schedule(big_t)?;
        let (x0, y, e) = (rng.normal(), rng.normal(), rng.normal());
        let xt = forward_sample(&s, &Tensor::scalar(x0), &Tensor::scalar(y), t, &Tensor::scalar(e))?.data()[0];
        let got = s.c_x[t] * xt + s.c_y[t] * y - s.c_eps[t] * (xt - x0);
        let (mt, mp, dt, dp) = (s.m[t], s.m[t - 1], s.delta[t], s.delta[t - 1]);
        let dts = dt - dp * ((1.0 - mt) / (1.0 - mp)).powi(2);
        let shrink = dp / dt * (1.0 - mt) / (1.0 - mp);
        let want = shrink * xt + (1.0 - mp) * dts / dt * x0 + (mp - mt * shrink) * y;
        posterior = posterior.max((got - want).abs());
    }
    // Endpoint pinning and oracle recovery.
    let sched = make_schedule(200)?;
    let x0: Tensor<f64> = rng.rand_uniform(&[8, 8, 1], -1.0, 1.0)?;
    let y: Tensor<f64> = rng.rand_uniform(&[8, 8, 1], -1.0, 1.0)?;
    let eps: Tensor<f64> = rng.randn(&[8, 8, 1])?;
    let pin = forward_sample(&sched, &x0, &y, 200, &eps)?
        .max_abs_diff(&y)?
        .max(forward_sample(&sched, &x0, &y, 0, &eps)?.max_abs_diff(&x0)?)
        .max(sched.delta_post[1]);
    let mut oracle = |xt: &Tensor<f64>, _: &Tensor<f64>, _: usize, _: f64| xt.sub(&x0);
    let (out, _) = sample_counted(&sched, &mut oracle, &y, &TimestepGrid::full(200)?, &mut rng)?;
    let recovery = out.max_abs_diff(&x0)?;
    Ok(vec![
        Check::at_most("bbdp", "marginal_consistency_standard_errors", worst_se, 3.0),
        Check::at_most("bbdp", "posterior_coefficients", posterior, 1e-10),
        Check::at_most("bbdp", "endpoint_pinning", pin, 0.0),
        Check::at_most("bbdp", "oracle_recovery", recovery, 1e-6),
    ])
}

fn grad(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (i, kind) in LayerKind::ALL.iter().enumerate() {
        let r = check_layer_kind(*kind, 20, seed.wrapping_add(i as u64))?;
        checks.push(Check::at_most("grad", format!("layer_{}", kind.name()), r.max_rel_error, DEFAULT_TOLERANCE));
    }
    for (i, which) in Builder::ALL.iter().enumerate() {
        let r = check_builder(*which, 1, 24, seed.wrapping_add(100 + i as u64))?;
        checks.push(Check::at_most("grad", format!("builder_{}", which.name()), r.max_rel_error, DEFAULT_TOLERANCE));
    }
    Ok(checks)
}

fn duality(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed).derive(40);
    let d = 16;
    let mut worst = 0.0f64;
    let mut stationary = 0.0f64;
    for _ in 0..100 {
        let m: Vec<f64> = (0..d * d).map(|_| rng.normal()).collect();
        let mut sigma = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                sigma[i * d + j] = (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum::<f64>() / d as f64;
            }
            sigma[i * d + i] += 0.1;
        }
        let sigma = Tensor::new(&[d, d], sigma)?;
        let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let t = 0.05 + 2.0 * rng.uniform();
        worst = worst.max(duality_check(&sigma, t, &x, 4, 4, 2)?);
        stationary = stationary.max(duality_check(&sigma, f64::INFINITY, &x, 4, 4, 2)?);
    }
    let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let iso = duality_check(&identity(d), 0.7, &x, 4, 4, 2)?;
    Ok(vec![
        Check::at_most("duality", "random_covariance_d16", worst, 1e-8),
        Check::at_most("duality", "stationary_limit", stationary, 1e-8),
        Check::at_most("duality", "isotropic", iso, 1e-10),
    ])
}
