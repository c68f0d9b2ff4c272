//! Dense kernels shared by the three architectures. Matrices are row-major
//! `f64` slices; `rows` is always the pixel/token axis.

/// `c = a·b` (or `c += a·b` when `accumulate`), with optional transposes.
///
/// `a` is `m×k` after the optional transpose and `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the m×k, k×n and m×n index ranges
    // described by the strides above (checked by the debug assertions).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x·w + b` for `rows × din` input and `din × dout` weights.
pub(crate) fn dense_forward(x: &[f64], rows: usize, w: &[f64], b: Option<&[f64]>, din: usize, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(dout) {
            row.copy_from_slice(b);
        }
    }
    gemm(rows, din, dout, x, false, w, false, &mut y, b.is_some());
    y
}

/// Accumulates weight/bias gradients and returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    rows: usize,
    w: &[f64],
    din: usize,
    dout: usize,
    dy: &[f64],
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm(din, rows, dout, x, true, dy, false, gw, true);
    if let Some(gb) = gb {
        for row in dy.chunks_exact(dout) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    if want_dx {
        let mut dx = vec![0.0; rows * din];
        gemm(rows, dout, din, dy, false, w, true, &mut dx, false);
        Some(dx)
    } else {
        None
    }
}

pub(crate) fn relu(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Masks `dy` by the activation pattern of a ReLU output.
pub(crate) fn relu_backward(out: &[f64], dy: &mut [f64]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 3×3 zero-padded patch extraction for NHWC input; rows are output pixels,
/// columns are ordered `(ky, kx, channel)`.
pub(crate) fn im2col3x3(x: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let cols = 9 * c;
    let mut out = vec![0.0; n * h * w * cols];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * cols;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = ((b * h + sy as usize) * w + sx as usize) * c;
                        let dst = row + (ky * 3 + kx) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col3x3`].
pub(crate) fn col2im3x3(dcols: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let cols = 9 * c;
    let mut dx = vec![0.0; n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * cols;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + sy as usize) * w + sx as usize) * c;
                        let src = row + (ky * 3 + kx) * c;
                        for i in 0..c {
                            dx[dst + i] += dcols[src + i];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Rearranges NHWC pixels into non-overlapping `p×p` patch rows ordered
/// `(py, px, channel)`; tokens are raster-ordered per image.
pub(crate) fn patchify(x: &[f64], n: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<f64> {
    let (th, tw) = (h / p, w / p);
    let dim = p * p * c;
    let mut out = vec![0.0; n * th * tw * dim];
    for b in 0..n {
        for ty in 0..th {
            for tx in 0..tw {
                let tok = ((b * th + ty) * tw + tx) * dim;
                for py in 0..p {
                    for px in 0..p {
                        let src = ((b * h + ty * p + py) * w + tx * p + px) * c;
                        let dst = tok + (py * p + px) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`]; since patches do not overlap it is also its adjoint.
pub(crate) fn unpatchify(t: &[f64], n: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<f64> {
    let (th, tw) = (h / p, w / p);
    let dim = p * p * c;
    let mut out = vec![0.0; n * h * w * c];
    for b in 0..n {
        for ty in 0..th {
            for tx in 0..tw {
                let tok = ((b * th + ty) * tw + tx) * dim;
                for py in 0..p {
                    for px in 0..p {
                        let dst = ((b * h + ty * p + py) * w + tx * p + px) * c;
                        let src = tok + (py * p + px) * c;
                        out[dst..dst + c].copy_from_slice(&t[src..src + c]);
                    }
                }
            }
        }
    }
    out
}
