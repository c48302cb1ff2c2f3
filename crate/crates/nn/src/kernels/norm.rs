//! Group normalization over `[B, C, H, W]`.

use mscgm_core::Scalar;

pub const GROUP_NORM_EPS: f64 = 1e-5;

pub struct GroupNormCache<D> {
    pub xhat: Vec<D>,
    /// One entry per (sample, group).
    pub rstd: Vec<D>,
}

pub fn forward<D: Scalar>(
    x: &[D],
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    gamma: &[D],
    beta: &[D],
) -> (Vec<D>, GroupNormCache<D>) {
    let cg = channels / groups;
    let n = cg * spatial;
    let inv_n = D::one() / D::from_usize(n);
    let eps = D::from_f64(GROUP_NORM_EPS);
    let mut out = vec![D::zero(); x.len()];
    let mut xhat = vec![D::zero(); x.len()];
    let mut rstd_all = Vec::with_capacity(batch * groups);
    for b in 0..batch {
        for gi in 0..groups {
            let start = (b * channels + gi * cg) * spatial;
            let seg = &x[start..start + n];
            let mut mean = D::zero();
            for &v in seg {
                mean += v;
            }
            mean *= inv_n;
            let mut var = D::zero();
            for &v in seg {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let rstd = D::one() / (var + eps).sqrt();
            rstd_all.push(rstd);
            for (i, &v) in seg.iter().enumerate() {
                let c = gi * cg + i / spatial;
                let xh = (v - mean) * rstd;
                xhat[start + i] = xh;
                out[start + i] = xh * gamma[c] + beta[c];
            }
        }
    }
    (out, GroupNormCache { xhat, rstd: rstd_all })
}

#[allow(clippy::too_many_arguments)]
pub fn backward<D: Scalar>(
    cache: &GroupNormCache<D>,
    dout: &[D],
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    gamma: &[D],
    dgamma: &mut [D],
    dbeta: &mut [D],
) -> Vec<D> {
    let cg = channels / groups;
    let n = cg * spatial;
    let inv_n = D::one() / D::from_usize(n);
    let mut dx = vec![D::zero(); dout.len()];
    for b in 0..batch {
        for c in 0..channels {
            let start = (b * channels + c) * spatial;
            let (mut dg, mut db) = (D::zero(), D::zero());
            for i in start..start + spatial {
                dg += dout[i] * cache.xhat[i];
                db += dout[i];
            }
            dgamma[c] += dg;
            dbeta[c] += db;
        }
        for gi in 0..groups {
            let start = (b * channels + gi * cg) * spatial;
            let rstd = cache.rstd[b * groups + gi];
            let (mut sum_d, mut sum_dx) = (D::zero(), D::zero());
            for i in 0..n {
                let c = gi * cg + i / spatial;
                let d = dout[start + i] * gamma[c];
                sum_d += d;
                sum_dx += d * cache.xhat[start + i];
            }
            for i in 0..n {
                let c = gi * cg + i / spatial;
                let d = dout[start + i] * gamma[c];
                dx[start + i] = rstd * (d - inv_n * sum_d - cache.xhat[start + i] * inv_n * sum_dx);
            }
        }
    }
    dx
}
