//! Scalar objectives with their gradients, and the critic gradient penalty.

use mscgm_core::stats::metrics::gaussian_window;
use mscgm_core::{Dual, Error, Real, Result, Scalar, Tensor};

use crate::exec;
use crate::network::Network;

/// A loss value with its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct LossGrad<S> {
    pub value: f64,
    pub grad: Tensor<S>,
}

/// Mean squared error.
pub fn mse<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<LossGrad<S>> {
    pred.expect_same_shape(target)?;
    let n = pred.numel() as f64;
    let mut value = 0.0;
    let scale = S::from_f64(2.0 / n);
    let grad = pred.zip_map(target, |p, t| {
        let d = p - t;
        scale * d
    })?;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = (p - t).to_f64();
        value += d * d;
    }
    Ok(LossGrad { value: value / n, grad })
}

/// Mean absolute error; the subgradient at zero is zero.
pub fn l1<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<LossGrad<S>> {
    pred.expect_same_shape(target)?;
    let n = pred.numel() as f64;
    let step = S::from_f64(1.0 / n);
    let grad = pred.zip_map(target, |p, t| {
        if p > t {
            step
        } else if p < t {
            -step
        } else {
            S::zero()
        }
    })?;
    let value = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).to_f64().abs())
        .sum::<f64>()
        / n;
    Ok(LossGrad { value, grad })
}

/// Mean of all entries, e.g. critic scores.
pub fn mean<S: Scalar>(x: &Tensor<S>) -> LossGrad<S> {
    let n = x.numel() as f64;
    let value = x.data().iter().map(|v| v.to_f64()).sum::<f64>() / n;
    LossGrad {
        value,
        grad: Tensor::full(x.shape(), S::from_f64(1.0 / n)),
    }
}

/// Largest odd window not exceeding `limit` or the plane extent.
pub fn ssim_window(limit: usize, h: usize, w: usize) -> usize {
    let m = limit.min(h).min(w);
    if m % 2 == 0 {
        m.saturating_sub(1)
    } else {
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimLossConfig {
    pub max_window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub max_val: f64,
}

impl Default for SsimLossConfig {
    fn default() -> Self {
        Self {
            max_window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            max_val: 2.0,
        }
    }
}

fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * plane[y * w + x + i];
            }
            rows[y * ow + x] = acc;
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

/// Adjoint of [`filter_valid`]: spreads an `oh × ow` map back onto `h × w`.
fn filter_valid_adjoint(map: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (i, t) in taps.iter().enumerate() {
                rows[(y + i) * ow + x] += t * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (i, t) in taps.iter().enumerate() {
                out[y * w + x + i] += t * v;
            }
        }
    }
    out
}

/// `1 − SSIM(pred, target)` over `[B, C, H, W]`, averaged over every valid
/// window position of every plane, with its gradient in `pred`.
pub fn ssim_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, cfg: &SsimLossConfig) -> Result<LossGrad<S>> {
    pred.expect_same_shape(target)?;
    let [b, c, h, w] = *pred.shape() else {
        return Err(Error::InvalidShape(format!(
            "SSIM loss expects [B, C, H, W], got {:?}",
            pred.shape()
        )));
    };
    let k = ssim_window(cfg.max_window, h, w);
    if k == 0 {
        return Err(Error::InvalidShape(format!("planes {h}×{w} too small for SSIM")));
    }
    let taps = gaussian_window(k, cfg.sigma);
    let c1 = (cfg.k1 * cfg.max_val).powi(2);
    let c2 = (cfg.k2 * cfg.max_val).powi(2);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let planes = b * c;
    let count = (planes * oh * ow) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.numel());
    for p in 0..planes {
        let x: Vec<f64> = pred.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.to_f64()).collect();
        let y: Vec<f64> = target.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.to_f64()).collect();
        let mu_x = filter_valid(&x, h, w, &taps);
        let mu_y = filter_valid(&y, h, w, &taps);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let e_xx = filter_valid(&xx, h, w, &taps);
        let e_yy = filter_valid(&yy, h, w, &taps);
        let e_xy = filter_valid(&xy, h, w, &taps);
        let n = oh * ow;
        let (mut g_mu, mut g_xx, mut g_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * cov + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = vx + vy + c2;
            total += (a1 * a2) / (b1 * b2);
            // Partials of the map entry in (μx, σx², σxy).
            let d_mu = (2.0 * my * a2) / (b1 * b2) - (a1 * a2 * 2.0 * mx) / (b1 * b1 * b2);
            let d_var = -(a1 * a2) / (b1 * b2 * b2);
            let d_cov = (2.0 * a1) / (b1 * b2);
            // σx² = E[x²] − μx², σxy = E[xy] − μxμy.
            g_mu[i] = d_mu - 2.0 * mx * d_var - my * d_cov;
            g_xx[i] = d_var;
            g_xy[i] = d_cov;
        }
        let from_mu = filter_valid_adjoint(&g_mu, h, w, &taps);
        let from_xx = filter_valid_adjoint(&g_xx, h, w, &taps);
        let from_xy = filter_valid_adjoint(&g_xy, h, w, &taps);
        for j in 0..h * w {
            let d = from_mu[j] + 2.0 * x[j] * from_xx[j] + y[j] * from_xy[j];
            grad.push(S::from_f64(-d / count));
        }
    }
    Ok(LossGrad {
        value: 1.0 - total / count,
        grad: Tensor::new(pred.shape(), grad)?,
    })
}

/// Gradient penalty `mean_b (‖∇ₓ D(x̂_b)‖ − 1)²` on input `slot`.
pub struct GradientPenalty<S> {
    pub value: f64,
    /// Gradient of the penalty with respect to each parameter.
    pub param_grads: Vec<Tensor<S>>,
    /// Per-sample input-gradient norms.
    pub norms: Vec<f64>,
}

/// Evaluates the penalty at `inputs` (whose `slot` entry is the interpolate)
/// and its exact parameter gradient. The mixed second derivative is obtained
/// by one forward-mode sweep over the reverse pass, seeded with the penalty's
/// sensitivity to the input gradient.
pub fn gradient_penalty<S: Real>(net: &Network<S>, inputs: &[Tensor<S>], slot: usize) -> Result<GradientPenalty<S>> {
    let graph = net.graph();
    if slot >= inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "penalty slot {slot} out of range for {} inputs",
            inputs.len()
        )));
    }
    let trace = exec::forward(graph, net.params(), inputs)?;
    let out = trace.output(graph);
    if out.numel() != out.shape()[0] {
        return Err(Error::ContractViolation(format!(
            "gradient penalty needs one score per sample, output is {:?}",
            out.shape()
        )));
    }
    let batch = out.shape()[0];
    let ones = Tensor::full(out.shape(), S::one());
    let grads = exec::backward(graph, net.params(), &trace, &ones)?;
    let g = &grads.inputs[slot];
    let per = g.numel() / batch;
    let mut value = 0.0;
    let mut norms = Vec::with_capacity(batch);
    let mut seed = vec![S::zero(); g.numel()];
    for bi in 0..batch {
        let gb = &g.data()[bi * per..(bi + 1) * per];
        let norm = gb.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt();
        norms.push(norm);
        value += (norm - 1.0).powi(2);
        if norm > 0.0 {
            let coef = 2.0 * (norm - 1.0) / (batch as f64 * norm);
            for (s, &v) in seed[bi * per..(bi + 1) * per].iter_mut().zip(gb) {
                *s = S::from_f64(coef) * v;
            }
        }
    }
    value /= batch as f64;

    let dual_params: Vec<Tensor<Dual<S>>> = net.params().iter().map(|p| p.map_into(Dual::constant)).collect();
    let dual_inputs: Vec<Tensor<Dual<S>>> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == slot {
                Tensor::new(
                    t.shape(),
                    t.data().iter().zip(&seed).map(|(&x, &d)| Dual::new(x, d)).collect(),
                )
            } else {
                Ok(t.map_into(Dual::constant))
            }
        })
        .collect::<Result<_>>()?;
    let dual_trace = exec::forward(graph, &dual_params, &dual_inputs)?;
    let dual_ones = Tensor::full(out.shape(), Dual::constant(S::one()));
    let dual_grads = exec::backward(graph, &dual_params, &dual_trace, &dual_ones)?;
    let param_grads = dual_grads.params.iter().map(|t| t.map_into(|d| d.du)).collect();
    Ok(GradientPenalty {
        value,
        param_grads,
        norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_and_l1_closed_forms() {
        let p = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = Tensor::new(&[2, 2], vec![1.0, 0.0, 4.0, 4.0]).unwrap();
        let m = mse(&p, &t).unwrap();
        assert!((m.value - 5.0 / 4.0).abs() < 1e-15);
        assert_eq!(m.grad.data(), &[0.0, 1.0, -0.5, 0.0]);
        let a = l1(&p, &t).unwrap();
        assert!((a.value - 3.0 / 4.0).abs() < 1e-15);
        assert_eq!(a.grad.data(), &[0.0, 0.25, -0.25, 0.0]);
    }

    #[test]
    fn window_selection() {
        assert_eq!(ssim_window(11, 32, 32), 11);
        assert_eq!(ssim_window(11, 8, 8), 7);
        assert_eq!(ssim_window(11, 7, 16), 7);
        assert_eq!(ssim_window(11, 1, 1), 1);
    }

    #[test]
    fn identical_images_have_zero_ssim_loss() {
        let x = Tensor::from_fn(&[1, 2, 12, 12], |i| ((i * 37) % 17) as f64 / 8.0 - 1.0);
        let l = ssim_loss(&x, &x, &SsimLossConfig::default()).unwrap();
        assert!(l.value.abs() < 1e-12);
        assert!(l.grad.data().iter().all(|g| g.abs() < 1e-12));
    }
}
