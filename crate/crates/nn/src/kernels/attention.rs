//! Multi-head self-attention over the spatial positions of `[B, C, H, W]`.
//!
//! Each sample is treated as a `C × N` token matrix (`N = H·W`). Queries,
//! keys and values come from one fused `3C × C` projection; heads split the
//! channel axis evenly.

use mscgm_core::Scalar;

pub struct AttentionCache<D> {
    /// `B × 3C × N`
    pub qkv: Vec<D>,
    /// `B × heads × N × N` softmax weights.
    pub probs: Vec<D>,
    /// `B × C × N` head outputs before the output projection.
    pub mixed: Vec<D>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionDims {
    pub batch: usize,
    pub channels: usize,
    pub tokens: usize,
    pub heads: usize,
}

impl AttentionDims {
    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

fn softmax_rows<D: Scalar>(s: &mut [D], n: usize) {
    for row in s.chunks_exact_mut(n) {
        let mut m = row[0];
        for &v in row.iter() {
            m = m.max(v);
        }
        let mut total = D::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        let inv = D::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

fn add_row_bias<D: Scalar>(m: &mut [D], bias: &[D], cols: usize) {
    for (r, row) in m.chunks_exact_mut(cols).enumerate() {
        row.iter_mut().for_each(|v| *v += bias[r]);
    }
}

fn accumulate_row_sums<D: Scalar>(m: &[D], cols: usize, out: &mut [D]) {
    for (r, row) in m.chunks_exact(cols).enumerate() {
        let mut acc = D::zero();
        for &v in row {
            acc += v;
        }
        out[r] += acc;
    }
}

pub fn forward<D: Scalar>(
    x: &[D],
    dims: AttentionDims,
    qkv_w: &[D],
    qkv_b: &[D],
    out_w: &[D],
    out_b: &[D],
) -> (Vec<D>, AttentionCache<D>) {
    let AttentionDims {
        batch,
        channels: c,
        tokens: n,
        heads,
    } = dims;
    let d = dims.head_dim();
    let scale = D::one() / D::from_usize(d).sqrt();
    let mut qkv = vec![D::zero(); batch * 3 * c * n];
    let mut probs = vec![D::zero(); batch * heads * n * n];
    let mut mixed = vec![D::zero(); batch * c * n];
    let mut out = vec![D::zero(); batch * c * n];
    for b in 0..batch {
        let xb = &x[b * c * n..(b + 1) * c * n];
        let qb = &mut qkv[b * 3 * c * n..(b + 1) * 3 * c * n];
        D::gemm(3 * c, c, n, D::one(), qkv_w, c as isize, 1, xb, n as isize, 1, D::zero(), qb, n as isize, 1);
        add_row_bias(qb, qkv_b, n);
        let qb = &qkv[b * 3 * c * n..(b + 1) * 3 * c * n];
        for h in 0..heads {
            let q = &qb[h * d * n..];
            let k = &qb[(c + h * d) * n..];
            let v = &qb[(2 * c + h * d) * n..];
            let p = &mut probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
            D::gemm(n, d, n, scale, q, 1, n as isize, k, n as isize, 1, D::zero(), p, n as isize, 1);
            softmax_rows(p, n);
            let o = &mut mixed[(b * c + h * d) * n..(b * c + (h + 1) * d) * n];
            D::gemm(d, n, n, D::one(), v, n as isize, 1, p, 1, n as isize, D::zero(), o, n as isize, 1);
        }
        let ob = &mut out[b * c * n..(b + 1) * c * n];
        let mb = &mixed[b * c * n..(b + 1) * c * n];
        D::gemm(c, c, n, D::one(), out_w, c as isize, 1, mb, n as isize, 1, D::zero(), ob, n as isize, 1);
        add_row_bias(ob, out_b, n);
    }
    (out, AttentionCache { qkv, probs, mixed })
}

pub struct AttentionGrads<'a, D> {
    pub qkv_w: &'a mut [D],
    pub qkv_b: &'a mut [D],
    pub out_w: &'a mut [D],
    pub out_b: &'a mut [D],
}

pub fn backward<D: Scalar>(
    x: &[D],
    cache: &AttentionCache<D>,
    dout: &[D],
    dims: AttentionDims,
    qkv_w: &[D],
    out_w: &[D],
    grads: AttentionGrads<'_, D>,
) -> Vec<D> {
    let AttentionDims {
        batch,
        channels: c,
        tokens: n,
        heads,
    } = dims;
    let d = dims.head_dim();
    let scale = D::one() / D::from_usize(d).sqrt();
    let mut dx = vec![D::zero(); batch * c * n];
    let mut dmixed = vec![D::zero(); c * n];
    let mut dqkv = vec![D::zero(); 3 * c * n];
    let mut dp = vec![D::zero(); n * n];
    for b in 0..batch {
        let db = &dout[b * c * n..(b + 1) * c * n];
        let mb = &cache.mixed[b * c * n..(b + 1) * c * n];
        let qb = &cache.qkv[b * 3 * c * n..(b + 1) * 3 * c * n];
        accumulate_row_sums(db, n, grads.out_b);
        // dWo += dout · mixedᵀ ; dmixed = Woᵀ · dout
        D::gemm(c, n, c, D::one(), db, n as isize, 1, mb, 1, n as isize, D::one(), grads.out_w, c as isize, 1);
        D::gemm(c, c, n, D::one(), out_w, 1, c as isize, db, n as isize, 1, D::zero(), &mut dmixed, n as isize, 1);
        for h in 0..heads {
            let p = &cache.probs[(b * heads + h) * n * n..(b * heads + h + 1) * n * n];
            let q = &qb[h * d * n..(h + 1) * d * n];
            let k = &qb[(c + h * d) * n..(c + (h + 1) * d) * n];
            let v = &qb[(2 * c + h * d) * n..(2 * c + (h + 1) * d) * n];
            let dout_h = &dmixed[h * d * n..(h + 1) * d * n];
            // dV = dO · P
            D::gemm(
                d,
                n,
                n,
                D::one(),
                dout_h,
                n as isize,
                1,
                p,
                n as isize,
                1,
                D::zero(),
                &mut dqkv[(2 * c + h * d) * n..(2 * c + (h + 1) * d) * n],
                n as isize,
                1,
            );
            // dP = dOᵀ · V
            D::gemm(n, d, n, D::one(), dout_h, 1, n as isize, v, n as isize, 1, D::zero(), &mut dp, n as isize, 1);
            for (prow, dprow) in p.chunks_exact(n).zip(dp.chunks_exact_mut(n)) {
                let mut dot = D::zero();
                for (&pi, &gi) in prow.iter().zip(dprow.iter()) {
                    dot += pi * gi;
                }
                for (g, &pi) in dprow.iter_mut().zip(prow) {
                    *g = pi * (*g - dot) * scale;
                }
            }
            // dQ = K · dSᵀ ; dK = Q · dS
            D::gemm(
                d,
                n,
                n,
                D::one(),
                k,
                n as isize,
                1,
                &dp,
                1,
                n as isize,
                D::zero(),
                &mut dqkv[h * d * n..(h + 1) * d * n],
                n as isize,
                1,
            );
            D::gemm(
                d,
                n,
                n,
                D::one(),
                q,
                n as isize,
                1,
                &dp,
                n as isize,
                1,
                D::zero(),
                &mut dqkv[(c + h * d) * n..(c + (h + 1) * d) * n],
                n as isize,
                1,
            );
        }
        let xb = &x[b * c * n..(b + 1) * c * n];
        accumulate_row_sums(&dqkv, n, grads.qkv_b);
        D::gemm(3 * c, n, c, D::one(), &dqkv, n as isize, 1, xb, 1, n as isize, D::one(), grads.qkv_w, c as isize, 1);
        D::gemm(
            c,
            3 * c,
            n,
            D::one(),
            qkv_w,
            1,
            c as isize,
            &dqkv,
            n as isize,
            1,
            D::zero(),
            &mut dx[b * c * n..(b + 1) * c * n],
            n as isize,
            1,
        );
    }
    dx
}
