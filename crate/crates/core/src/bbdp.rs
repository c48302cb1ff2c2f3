//! Brownian-bridge diffusion: schedule, forward kernels, posterior reverse
//! step and the ancestral sampler.
//!
//! The forward chain starts at the target `x0` (t = 0) and is pinned to the
//! condition `y` at t = T:
//!
//! ```text
//! x_t = x0 + m_t (y − x0) + √δ_t ε,   m_t = t/T,   δ_t = t(T − t)/T²
//! ```
//!
//! The bridge is Markov, so the transition between any two times `s < t`
//! has closed form. Adjacent steps (`s = t − 1`) are precomputed in
//! [`BridgeSchedule`]; arbitrary jumps used by reduced-step sampling go
//! through [`BridgeSchedule::transition`].

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Coefficients of one forward or reverse transition `t → s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    /// Posterior mean `c_x·x_t + c_y·y − c_eps·ε̂`.
    pub c_x: f64,
    pub c_y: f64,
    pub c_eps: f64,
    /// Posterior variance δ'.
    pub variance: f64,
}

/// Per-timestep bridge coefficients for `t ∈ {0, …, T}`.
///
/// Index `t` of every array refers to timestep `t`; entries at `t = 0` of
/// the step-wise arrays are zero placeholders.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSchedule {
    total_steps: usize,
    pub m: Vec<f64>,
    pub delta: Vec<f64>,
    /// δ_{t|t−1}: variance of the one-step forward kernel.
    pub delta_step: Vec<f64>,
    pub c_x: Vec<f64>,
    pub c_y: Vec<f64>,
    pub c_eps: Vec<f64>,
    /// δ'_t: variance of the one-step posterior.
    pub delta_post: Vec<f64>,
}

impl BridgeSchedule {
    pub fn new(total_steps: usize) -> Result<Self> {
        if total_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "bridge needs at least 2 steps, got {total_steps}"
            )));
        }
        let t_f = total_steps as f64;
        let m: Vec<f64> = (0..=total_steps).map(|t| t as f64 / t_f).collect();
        let delta: Vec<f64> = (0..=total_steps)
            .map(|t| (t * (total_steps - t)) as f64 / (t_f * t_f))
            .collect();
        let mut sched = Self {
            total_steps,
            m,
            delta,
            delta_step: vec![0.0; total_steps + 1],
            c_x: vec![0.0; total_steps + 1],
            c_y: vec![0.0; total_steps + 1],
            c_eps: vec![0.0; total_steps + 1],
            delta_post: vec![0.0; total_steps + 1],
        };
        for t in 1..=total_steps {
            sched.delta_step[t] = sched.conditional_variance(t, t - 1);
            let tr = sched.transition(t, t - 1)?;
            sched.c_x[t] = tr.c_x;
            sched.c_y[t] = tr.c_y;
            sched.c_eps[t] = tr.c_eps;
            sched.delta_post[t] = tr.variance;
        }
        Ok(sched)
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 0..={}",
                self.total_steps
            )));
        }
        Ok(())
    }

    /// δ_{t|s} = δ_t − δ_s (1 − m_t)² / (1 − m_s)², for s < t.
    pub fn conditional_variance(&self, t: usize, s: usize) -> f64 {
        let ratio = (1.0 - self.m[t]) / (1.0 - self.m[s]);
        (self.delta[t] - self.delta[s] * ratio * ratio).max(0.0)
    }

    /// Mean coefficients of the forward kernel `q(x_t | x_s, y)`: returns
    /// `(a, b)` with mean `a·x_s + b·y`.
    pub fn forward_coefficients(&self, t: usize, s: usize) -> (f64, f64) {
        let a = (1.0 - self.m[t]) / (1.0 - self.m[s]);
        (a, self.m[t] - a * self.m[s])
    }

    /// Reverse transition `t → s` with the noise prediction substituted for `x0`.
    ///
    /// Where δ_t > 0 this evaluates the posterior of `q(x_s | x_t, x0, y)`
    /// directly; at the pinned endpoint t = T (δ_T = 0) the closed-form limit
    /// is used: `c_x = 1`, `c_y = 0`, `c_eps = 1 − m_s`, `δ' = δ_s`.
    pub fn transition(&self, t: usize, s: usize) -> Result<Transition> {
        self.check_t(t)?;
        if s >= t {
            return Err(Error::InvalidArgument(format!(
                "reverse transition needs s < t, got t={t}, s={s}"
            )));
        }
        let (mt, ms) = (self.m[t], self.m[s]);
        let (dt, ds) = (self.delta[t], self.delta[s]);
        let tr = if dt > 0.0 {
            let dts = self.conditional_variance(t, s);
            let shrink = (ds / dt) * (1.0 - mt) / (1.0 - ms);
            let c_eps = (1.0 - ms) * dts / dt;
            Transition {
                from: t,
                to: s,
                c_x: shrink + c_eps,
                c_y: ms - mt * shrink,
                c_eps,
                variance: dts * ds / dt,
            }
        } else {
            Transition {
                from: t,
                to: s,
                c_x: 1.0,
                c_y: 0.0,
                c_eps: 1.0 - ms,
                variance: ds,
            }
        };
        Ok(tr)
    }
}

/// Free-function constructor.
pub fn make_schedule(total_steps: usize) -> Result<BridgeSchedule> {
    BridgeSchedule::new(total_steps)
}

fn expect_shapes<S: Scalar>(tensors: &[(&str, &Tensor<S>)]) -> Result<()> {
    let (first_name, first) = tensors[0];
    for &(name, t) in &tensors[1..] {
        if t.shape() != first.shape() {
            return Err(shape_err!(
                "{name} shape {:?} differs from {first_name} shape {:?}",
                t.shape(),
                first.shape()
            ));
        }
    }
    Ok(())
}

/// `x_t = x0 + m_t (y − x0) + √δ_t ε`.
pub fn forward_sample<S: Scalar>(
    sched: &BridgeSchedule,
    x0: &Tensor<S>,
    y: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
) -> Result<Tensor<S>> {
    sched.check_t(t)?;
    expect_shapes(&[("x0", x0), ("y", y), ("eps", eps)])?;
    // Interpolation form keeps both endpoints exact in floating point.
    let m = S::from_f64(sched.m[t]);
    let keep = S::from_f64(1.0 - sched.m[t]);
    let sd = S::from_f64(sched.delta[t].sqrt());
    let data = x0
        .data()
        .iter()
        .zip(y.data())
        .zip(eps.data())
        .map(|((&a, &b), &e)| keep * a + m * b + sd * e)
        .collect();
    Tensor::new(x0.shape(), data)
}

/// Regression target of the noise predictor: `m_t (y − x0) + √δ_t ε`.
pub fn training_target<S: Scalar>(
    sched: &BridgeSchedule,
    x0: &Tensor<S>,
    y: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
) -> Result<Tensor<S>> {
    sched.check_t(t)?;
    expect_shapes(&[("x0", x0), ("y", y), ("eps", eps)])?;
    let m = S::from_f64(sched.m[t]);
    let sd = S::from_f64(sched.delta[t].sqrt());
    let data = x0
        .data()
        .iter()
        .zip(y.data())
        .zip(eps.data())
        .map(|((&a, &b), &e)| m * (b - a) + sd * e)
        .collect();
    Tensor::new(x0.shape(), data)
}

/// Draw from `q(x_t | x_{t−1}, y)`.
pub fn one_step_forward<S: Scalar>(
    sched: &BridgeSchedule,
    x_prev: &Tensor<S>,
    y: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
) -> Result<Tensor<S>> {
    sched.check_t(t)?;
    if t == 0 {
        return Err(Error::InvalidArgument(
            "one-step forward kernel is defined for t ≥ 1".into(),
        ));
    }
    expect_shapes(&[("x_prev", x_prev), ("y", y), ("eps", eps)])?;
    let (a, b) = sched.forward_coefficients(t, t - 1);
    let (a, b) = (S::from_f64(a), S::from_f64(b));
    let sd = S::from_f64(sched.delta_step[t].sqrt());
    let data = x_prev
        .data()
        .iter()
        .zip(y.data())
        .zip(eps.data())
        .map(|((&xp, &yv), &e)| a * xp + b * yv + sd * e)
        .collect();
    Tensor::new(x_prev.shape(), data)
}

/// One posterior step `x_t → x_{t−1}`. `noise` is ignored at t = 1.
pub fn reverse_step<S: Scalar>(
    sched: &BridgeSchedule,
    x_t: &Tensor<S>,
    y: &Tensor<S>,
    t: usize,
    eps_pred: &Tensor<S>,
    noise: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "reverse step is defined for t ≥ 1".into(),
        ));
    }
    let tr = sched.transition(t, t - 1)?;
    apply_transition(&tr, x_t, y, eps_pred, noise)
}

/// Applies a precomputed reverse transition.
pub fn apply_transition<S: Scalar>(
    tr: &Transition,
    x_t: &Tensor<S>,
    y: &Tensor<S>,
    eps_pred: &Tensor<S>,
    noise: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    expect_shapes(&[("x_t", x_t), ("y", y), ("eps_pred", eps_pred)])?;
    let (cx, cy, ce) = (
        S::from_f64(tr.c_x),
        S::from_f64(tr.c_y),
        S::from_f64(tr.c_eps),
    );
    let mut data: Vec<S> = x_t
        .data()
        .iter()
        .zip(y.data())
        .zip(eps_pred.data())
        .map(|((&x, &yv), &e)| cx * x + cy * yv - ce * e)
        .collect();
    if tr.to > 0 && tr.variance > 0.0 {
        if let Some(z) = noise {
            expect_shapes(&[("x_t", x_t), ("noise", z)])?;
            let sd = S::from_f64(tr.variance.sqrt());
            for (d, &zv) in data.iter_mut().zip(z.data()) {
                *d += sd * zv;
            }
        }
    }
    Tensor::new(x_t.shape(), data)
}

/// Strictly decreasing timesteps from `T` down to `1` visited by the sampler.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestepGrid {
    steps: Vec<usize>,
}

impl TimestepGrid {
    pub fn new(total_steps: usize, steps: Vec<usize>) -> Result<Self> {
        let valid = steps.first() == Some(&total_steps)
            && steps.last() == Some(&1)
            && steps.windows(2).all(|w| w[0] > w[1]);
        if !valid {
            return Err(Error::InvalidArgument(format!(
                "timestep grid must decrease strictly from {total_steps} to 1, got {steps:?}"
            )));
        }
        Ok(Self { steps })
    }

    pub fn full(total_steps: usize) -> Result<Self> {
        Self::new(total_steps, (1..=total_steps).rev().collect())
    }

    /// `n` roughly uniformly spaced steps including `T` and `1`
    /// (`n ≥ T` gives the full grid).
    pub fn uniform(total_steps: usize, n: usize) -> Result<Self> {
        if n < 2 && total_steps > 1 {
            return Err(Error::InvalidArgument(format!(
                "a grid needs at least 2 steps, got {n}"
            )));
        }
        if n >= total_steps {
            return Self::full(total_steps);
        }
        let span = (total_steps - 1) as f64;
        let mut steps: Vec<usize> = (0..n)
            .map(|i| {
                let v = total_steps as f64 - span * i as f64 / (n - 1) as f64;
                v.round() as usize
            })
            .collect();
        steps.dedup();
        Self::new(total_steps, steps)
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Consecutive `(t, s)` jumps ending at `s = 0`.
    pub fn jumps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(move |(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}

/// A model of the bridge training target `m_t (y − x0) + √δ_t ε`.
///
/// Receives the integer timestep and the normalized time `t/T`.
pub trait EpsPredictor<S: Scalar> {
    fn predict(&mut self, x_t: &Tensor<S>, y: &Tensor<S>, t: usize, t_norm: f64) -> Result<Tensor<S>>;
}

impl<S: Scalar, F> EpsPredictor<S> for F
where
    F: FnMut(&Tensor<S>, &Tensor<S>, usize, f64) -> Result<Tensor<S>>,
{
    fn predict(&mut self, x_t: &Tensor<S>, y: &Tensor<S>, t: usize, t_norm: f64) -> Result<Tensor<S>> {
        self(x_t, y, t, t_norm)
    }
}

/// Work counters from one sampler run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleCounters {
    pub predictor_calls: usize,
    /// Elements of `x_t` passed through the predictor per call.
    pub pixels_per_step: usize,
}

impl SampleCounters {
    pub fn pixel_ops(&self) -> usize {
        self.predictor_calls * self.pixels_per_step
    }
}

/// Ancestral sampling from `x_T = y` down to `x_0`.
pub fn sample<S: Scalar, P: EpsPredictor<S> + ?Sized>(
    sched: &BridgeSchedule,
    model: &mut P,
    y: &Tensor<S>,
    grid: &TimestepGrid,
    rng: &mut Rng,
) -> Result<Tensor<S>> {
    sample_counted(sched, model, y, grid, rng).map(|(x, _)| x)
}

pub fn sample_counted<S: Scalar, P: EpsPredictor<S> + ?Sized>(
    sched: &BridgeSchedule,
    model: &mut P,
    y: &Tensor<S>,
    grid: &TimestepGrid,
    rng: &mut Rng,
) -> Result<(Tensor<S>, SampleCounters)> {
    if grid.steps()[0] != sched.total_steps() {
        return Err(Error::InvalidArgument(format!(
            "grid starts at {} but the schedule has T = {}",
            grid.steps()[0],
            sched.total_steps()
        )));
    }
    let t_total = sched.total_steps() as f64;
    let mut counters = SampleCounters {
        predictor_calls: 0,
        pixels_per_step: y.numel(),
    };
    let mut x = y.clone();
    for (t, s) in grid.jumps() {
        let eps = model.predict(&x, y, t, t as f64 / t_total)?;
        if eps.shape() != x.shape() {
            return Err(Error::ContractViolation(format!(
                "predictor returned shape {:?} for input {:?} at t={t}",
                eps.shape(),
                x.shape()
            )));
        }
        counters.predictor_calls += 1;
        let tr = sched.transition(t, s)?;
        let noise = if s > 0 {
            Some(rng.randn::<S>(x.shape())?)
        } else {
            None
        };
        x = apply_transition(&tr, &x, y, &eps, noise.as_ref())?;
    }
    Ok((x, counters))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn schedule_closed_forms() {
        let s = make_schedule(1000).unwrap();
        assert_eq!(s.m[500], 0.5);
        assert_eq!(s.delta[500], 0.25);
        assert_eq!((s.m[0], s.m[1000]), (0.0, 1.0));
        assert_eq!((s.delta[0], s.delta[1000]), (0.0, 0.0));
        assert!(s.delta.iter().all(|&d| d <= 0.25));
        for t in 1..1000 {
            assert!(s.delta_step[t] >= 0.0);
            assert!(s.delta_post[t] >= 0.0);
            let want = s.delta_step[t] * s.delta[t - 1] / s.delta[t];
            assert!((s.delta_post[t] - want).abs() <= 1e-12);
        }
        assert!(matches!(make_schedule(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn two_step_coefficients() {
        let s = make_schedule(2).unwrap();
        assert!((s.delta_step[1] - 0.25).abs() < 1e-15);
        assert_eq!(s.delta_post[1], 0.0);
        assert!((s.c_x[1] - 1.0).abs() < 1e-15);
        assert!(s.c_y[1].abs() < 1e-15);
        assert!((s.c_eps[1] - 1.0).abs() < 1e-15);
        // t = T pins the chain to y
        let (a, b) = s.forward_coefficients(2, 1);
        assert_eq!((a, b), (0.0, 1.0));
        assert_eq!(s.delta_step[2], 0.0);
    }

    #[test]
    fn forward_endpoints() {
        let s = make_schedule(10).unwrap();
        let x0 = Tensor::new(&[3], vec![0.1, -0.4, 0.9]).unwrap();
        let y = Tensor::new(&[3], vec![1.0, 0.5, -0.2]).unwrap();
        let eps = Tensor::new(&[3], vec![3.0, -2.0, 7.0]).unwrap();
        assert_eq!(forward_sample(&s, &x0, &y, 0, &eps).unwrap(), x0);
        assert_eq!(forward_sample(&s, &x0, &y, 10, &eps).unwrap(), y);
        let s2 = make_schedule(2).unwrap();
        let mid = forward_sample(&s2, &scalar(0.0), &scalar(1.0), 1, &scalar(0.0)).unwrap();
        assert_eq!(mid.data(), &[0.5]);
    }

    #[test]
    fn training_target_identities() {
        let s = make_schedule(8).unwrap();
        let x0 = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
        let y = Tensor::new(&[2], vec![-0.1, 0.2]).unwrap();
        let eps = Tensor::new(&[2], vec![0.5, 1.5]).unwrap();
        assert_eq!(training_target(&s, &x0, &y, 0, &eps).unwrap(), Tensor::zeros(&[2]));
        for t in 0..=8 {
            let tgt = training_target(&s, &x0, &y, t, &eps).unwrap();
            let xt = forward_sample(&s, &x0, &y, t, &eps).unwrap();
            assert!(x0.add(&tgt).unwrap().max_abs_diff(&xt).unwrap() < 1e-15);
        }
        let zero = Tensor::zeros(&[2]);
        let drift = training_target(&s, &x0, &y, 3, &zero).unwrap();
        let want = y.sub(&x0).unwrap().scale(s.m[3]);
        assert!(drift.max_abs_diff(&want).unwrap() < 1e-15);
        let same = training_target(&s, &x0, &x0, 3, &eps).unwrap();
        assert!(same.max_abs_diff(&eps.scale(s.delta[3].sqrt())).unwrap() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s = make_schedule(4).unwrap();
        let a = Tensor::<f64>::zeros(&[2]);
        let b = Tensor::<f64>::zeros(&[3]);
        assert!(matches!(forward_sample(&s, &a, &b, 1, &a), Err(Error::InvalidShape(_))));
        assert!(matches!(one_step_forward(&s, &a, &a, 0, &a), Err(Error::InvalidArgument(_))));
        assert!(matches!(reverse_step(&s, &a, &a, 0, &a, None), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn one_step_at_t_equals_t_is_y() {
        let s = make_schedule(5).unwrap();
        let y = Tensor::new(&[2], vec![0.25, -0.5]).unwrap();
        let x = Tensor::new(&[2], vec![9.0, 4.0]).unwrap();
        let e = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        assert_eq!(one_step_forward(&s, &x, &y, 5, &e).unwrap(), y);
    }

    #[test]
    fn one_step_from_x0_matches_marginal_at_t1() {
        let s = make_schedule(7).unwrap();
        let x0 = Tensor::new(&[2], vec![0.2, -0.3]).unwrap();
        let y = Tensor::new(&[2], vec![-1.0, 0.8]).unwrap();
        let e = Tensor::new(&[2], vec![0.4, 1.1]).unwrap();
        let a = one_step_forward(&s, &x0, &y, 1, &e).unwrap();
        let b = forward_sample(&s, &x0, &y, 1, &e).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
    }

    #[test]
    fn reverse_at_t1_subtracts_prediction() {
        let s = make_schedule(2).unwrap();
        let x1 = Tensor::new(&[2], vec![0.6, -0.2]).unwrap();
        let y = Tensor::new(&[2], vec![5.0, 5.0]).unwrap();
        let e = Tensor::new(&[2], vec![0.1, 0.3]).unwrap();
        let noise = Tensor::new(&[2], vec![100.0, 100.0]).unwrap();
        let x0 = reverse_step(&s, &x1, &y, 1, &e, Some(&noise)).unwrap();
        assert!(x0.max_abs_diff(&x1.sub(&e).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn telescoped_forward_mean_matches_marginal() {
        // Mean of the chained one-step kernels, propagated exactly.
        for big_t in [4usize, 10, 57] {
            let s = make_schedule(big_t).unwrap();
            let (x0, y) = (0.3, -1.2);
            let mut mean = x0;
            for t in 1..=big_t {
                let (a, b) = s.forward_coefficients(t, t - 1);
                mean = a * mean + b * y;
                let want = (1.0 - s.m[t]) * x0 + s.m[t] * y;
                assert!((mean - want).abs() <= 1e-10, "t={t}");
            }
        }
    }

    #[test]
    fn grid_construction() {
        let g = TimestepGrid::uniform(1000, 4).unwrap();
        assert_eq!(g.steps(), &[1000, 667, 334, 1]);
        assert_eq!(TimestepGrid::uniform(10, 50).unwrap().len(), 10);
        let jumps: Vec<_> = TimestepGrid::new(5, vec![5, 1]).unwrap().jumps().collect();
        assert_eq!(jumps, vec![(5, 1), (1, 0)]);
        assert!(TimestepGrid::new(5, vec![5, 3, 3, 1]).is_err());
        assert!(TimestepGrid::new(5, vec![4, 1]).is_err());
        assert!(TimestepGrid::new(5, vec![5, 2]).is_err());
    }

    #[test]
    fn sampler_rejects_bad_predictor_shape() {
        let s = make_schedule(4).unwrap();
        let y = Tensor::<f64>::zeros(&[2, 2, 1]);
        let mut bad = |_: &Tensor<f64>, _: &Tensor<f64>, _: usize, _: f64| Ok(Tensor::zeros(&[3]));
        let err = sample(&s, &mut bad, &y, &TimestepGrid::full(4).unwrap(), &mut Rng::new(0));
        assert!(matches!(err, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn two_step_grid_terminates() {
        let s = make_schedule(50).unwrap();
        let y = Tensor::<f64>::full(&[4, 4, 1], 0.3);
        let mut zero = |x: &Tensor<f64>, _: &Tensor<f64>, _: usize, _: f64| Ok(Tensor::zeros(x.shape()));
        let grid = TimestepGrid::new(50, vec![50, 1]).unwrap();
        let (out, counters) = sample_counted(&s, &mut zero, &y, &grid, &mut Rng::new(1)).unwrap();
        assert_eq!(out.shape(), y.shape());
        assert!(out.is_finite());
        assert_eq!(counters.predictor_calls, 2);
    }
}
