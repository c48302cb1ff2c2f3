//! 2-D convolution by im2col and matrix multiplication.

use mscgm_core::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, h: usize, w: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            h,
            w,
            ho: (h + 2 * pad - kernel) / stride + 1,
            wo: (w + 2 * pad - kernel) / stride + 1,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the column matrix is the input itself.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

/// `cols[(c·k + ky)·k + kx, oy·wo + ox] = x[c, oy·s + ky − p, ox·s + kx − p]`.
pub fn im2col<D: Scalar>(x: &[D], g: &ConvGeom, cols: &mut [D]) {
    let k = g.kernel;
    let np = g.out_pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * np..][..np];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        row[oy * g.wo + ox] = match g.source(oy, ox, ky, kx) {
                            Some((y, x)) => plane[y * g.w + x],
                            None => D::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `dx`.
pub fn col2im<D: Scalar>(cols: &[D], g: &ConvGeom, dx: &mut [D]) {
    let k = g.kernel;
    let np = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * np..][..np];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            plane[y * g.w + x] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass for a batch. Returns the output and the per-sample column
/// matrices (empty for pointwise convolutions).
pub fn forward<D: Scalar>(x: &[D], batch: usize, g: &ConvGeom, weight: &[D], bias: &[D]) -> (Vec<D>, Vec<D>) {
    let (rows, np) = (g.col_rows(), g.out_pixels());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * np;
    let mut out = vec![D::zero(); batch * out_len];
    let mut all_cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![D::zero(); batch * rows * np]
    };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let cols: &[D] = if g.is_pointwise() {
            xb
        } else {
            let buf = &mut all_cols[b * rows * np..(b + 1) * rows * np];
            im2col(xb, g, buf);
            buf
        };
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        for (co, chunk) in ob.chunks_exact_mut(np).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        D::gemm(
            g.cout,
            rows,
            np,
            D::one(),
            weight,
            rows as isize,
            1,
            cols,
            np as isize,
            1,
            D::one(),
            ob,
            np as isize,
            1,
        );
    }
    (out, all_cols)
}

/// Backward pass: accumulates weight/bias gradients and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn backward<D: Scalar>(
    x: &[D],
    cols: &[D],
    dout: &[D],
    batch: usize,
    g: &ConvGeom,
    weight: &[D],
    dweight: &mut [D],
    dbias: &mut [D],
) -> Vec<D> {
    let (rows, np) = (g.col_rows(), g.out_pixels());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * np;
    let mut dx = vec![D::zero(); batch * in_len];
    let mut dcols = vec![D::zero(); rows * np];
    for b in 0..batch {
        let db = &dout[b * out_len..(b + 1) * out_len];
        for (co, chunk) in db.chunks_exact(np).enumerate() {
            let mut acc = D::zero();
            for &v in chunk {
                acc += v;
            }
            dbias[co] += acc;
        }
        let colb: &[D] = if g.is_pointwise() {
            &x[b * in_len..(b + 1) * in_len]
        } else {
            &cols[b * rows * np..(b + 1) * rows * np]
        };
        // dW += dout · colsᵀ
        D::gemm(
            g.cout,
            np,
            rows,
            D::one(),
            db,
            np as isize,
            1,
            colb,
            1,
            np as isize,
            D::one(),
            dweight,
            rows as isize,
            1,
        );
        let dxb = &mut dx[b * in_len..(b + 1) * in_len];
        if g.is_pointwise() {
            // dx = Wᵀ · dout directly.
            D::gemm(
                rows,
                g.cout,
                np,
                D::one(),
                weight,
                1,
                rows as isize,
                db,
                np as isize,
                1,
                D::zero(),
                dxb,
                np as isize,
                1,
            );
        } else {
            D::gemm(
                rows,
                g.cout,
                np,
                D::one(),
                weight,
                1,
                rows as isize,
                db,
                np as isize,
                1,
                D::zero(),
                &mut dcols,
                np as isize,
                1,
            );
            col2im(&dcols, g, dxb);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of cross-correlation with zero padding.
    fn naive(x: &[f64], g: &ConvGeom, w: &[f64], b: &[f64]) -> Vec<f64> {
        let k = g.kernel;
        let mut out = vec![0.0; g.cout * g.ho * g.wo];
        for co in 0..g.cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = b[co];
                    for ci in 0..g.cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                                    acc += w[((co * g.cin + ci) * k + ky) * k + kx] * x[(ci * g.h + y) * g.w + xx];
                                }
                            }
                        }
                    }
                    out[(co * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_definition() {
        for &(k, s, p) in &[(3, 1, 1), (2, 2, 0), (1, 1, 0), (3, 2, 1)] {
            let g = ConvGeom::new(2, 3, k, s, p, 5, 6);
            let x: Vec<f64> = (0..2 * 30).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
            let w: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 5) % 11) as f64 * 0.1 - 0.5).collect();
            let b = vec![0.1, -0.2, 0.3];
            let (out, _) = forward(&x, 1, &g, &w, &b);
            let want = naive(&x, &g, &w, &b);
            for (a, e) in out.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 1, 3, 2, 1, 5, 5);
        let x: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.out_pixels()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; 50];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
