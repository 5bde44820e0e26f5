//! Raw numeric kernels behind the differentiable ops. Everything here works
//! on flat row-major slices; shape validation happens in the op layer.

/// Geometry of one 2-D convolution over a single `C×H×W` sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn pixels(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// A 1×1, stride-1, unpadded conv reads its input directly as the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c = a·b + beta·c` with explicit row/column strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every (row, col) reached through the
    // given strides, which describe either a row-major or a transposed view of
    // a contiguous m×k / k×n buffer; `c` is a distinct, exclusively borrowed
    // m×n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds the input into a `(C_in·k·k) × (H'·W')` patch matrix.
fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npix = oh * ow;
    let mut cols = vec![0.0; g.patch_len() * npix];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a patch-matrix gradient back onto the input grid, summing overlaps.
fn col2im(cols: &[f64], g: &ConvGeom, grad_input: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npix = oh * ow;
    for c in 0..g.c_in {
        let plane = &mut grad_input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, s) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(input: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let npix = g.pixels();
    let mut out = vec![0.0; g.c_out * npix];
    for (co, chunk) in out.chunks_mut(npix).enumerate() {
        chunk.fill(bias[co]);
    }
    let kk = g.patch_len();
    let owned;
    let cols: &[f64] = if g.is_pointwise() {
        input
    } else {
        owned = im2col(input, g);
        &owned
    };
    gemm(g.c_out, kk, npix, weight, (kk as isize, 1), cols, (npix as isize, 1), 1.0, &mut out);
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; each is `None` when not requested.
pub(crate) fn conv2d_backward(
    grad_out: &[f64],
    input: &[f64],
    weight: &[f64],
    g: &ConvGeom,
    need_input: bool,
    need_params: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let npix = g.pixels();
    let kk = g.patch_len();

    let (grad_weight, grad_bias) = if need_params {
        let owned;
        let cols: &[f64] = if g.is_pointwise() {
            input
        } else {
            owned = im2col(input, g);
            &owned
        };
        let mut gw = vec![0.0; g.c_out * kk];
        gemm(g.c_out, npix, kk, grad_out, (npix as isize, 1), cols, (1, npix as isize), 0.0, &mut gw);
        let gb = grad_out.chunks(npix).map(|c| c.iter().sum()).collect();
        (Some(gw), Some(gb))
    } else {
        (None, None)
    };

    let grad_input = need_input.then(|| {
        let mut gcols = vec![0.0; kk * npix];
        gemm(kk, g.c_out, npix, weight, (1, kk as isize), grad_out, (npix as isize, 1), 0.0, &mut gcols);
        if g.is_pointwise() {
            gcols
        } else {
            let mut gi = vec![0.0; g.c_in * g.h * g.w];
            col2im(&gcols, g, &mut gi);
            gi
        }
    });

    (grad_input, grad_weight, grad_bias)
}

/// `out = weight·x` for an `m×n` weight, as a GEMM with a single column.
pub(crate) fn matvec(weight: &[f64], x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    gemm(m, n, 1, weight, (n as isize, 1), x, (1, 1), 0.0, &mut out);
    out
}

/// Numerically stable softmax of a slice.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter_mut().for_each(|e| *e /= total);
    exps
}

/// `ln Σ exp(v)` computed with max subtraction.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
