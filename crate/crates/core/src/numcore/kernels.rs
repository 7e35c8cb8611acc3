//! Raw slice kernels shared by the tape ops. No shape checking happens here.

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += s * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let s = a[p * m + i];
            if s == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += s * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize the reduction
    // while keeping the summation order fixed.
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

/// Geometry of a 3×3, padding-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        ConvGeom {
            channels,
            height,
            width,
            stride,
            out_height: (height + 2 - 3) / stride + 1,
            out_width: (width + 2 - 3) / stride + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.channels * 9
    }

    pub fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Output columns `lo..hi` whose tap `kx` lands inside a row of `width`.
#[inline]
fn valid_cols(kx: usize, stride: usize, width: usize, out_width: usize) -> (usize, usize) {
    // input column is ox * stride + kx - 1
    let lo = usize::from(kx == 0);
    let hi = if width + 1 > kx { ((width + 1 - kx - 1) / stride + 1).min(out_width) } else { 0 };
    (lo, hi.max(lo))
}

/// `dst[j] = src[j * stride]`
#[inline]
fn gather(dst: &mut [f64], src: &[f64], stride: usize) {
    match stride {
        1 => dst.copy_from_slice(&src[..dst.len()]),
        2 => {
            // fixed-size chunks let the bounds checks fold away
            let n = dst.len();
            for (d, c) in dst[..n - 1].iter_mut().zip(src.chunks_exact(2)) {
                *d = c[0];
            }
            dst[n - 1] = src[2 * (n - 1)];
        }
        _ => {
            for (d, s) in dst.iter_mut().zip(src.iter().step_by(stride)) {
                *d = *s;
            }
        }
    }
}

/// `dst[j * stride] += src[j]`
#[inline]
fn scatter_add(dst: &mut [f64], src: &[f64], stride: usize) {
    match stride {
        1 => {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
        2 => {
            let n = src.len();
            for (c, s) in dst.chunks_exact_mut(2).zip(&src[..n - 1]) {
                c[0] += *s;
            }
            dst[2 * (n - 1)] += src[n - 1];
        }
        _ => {
            for (d, s) in dst.iter_mut().step_by(stride).zip(src) {
                *d += *s;
            }
        }
    }
}

/// Unfold one `C×H×W` image into a `(C·9)×(H'·W')` column matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.out_len();
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..3 {
            for kx in 0..3 {
                let (lo, hi) = valid_cols(kx, g.stride, g.width, g.out_width);
                let row = &mut cols[((c * 9) + ky * 3 + kx) * p..((c * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    let dst = &mut row[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy as usize >= g.height || lo >= hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let first = lo * g.stride + kx - 1;
                    gather(&mut dst[lo..hi], &src[first..], g.stride);
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto a `C×H×W` image (adjoint of [`im2col`]).
pub(crate) fn col2im_acc(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let p = g.out_len();
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..3 {
            for kx in 0..3 {
                let (lo, hi) = valid_cols(kx, g.stride, g.width, g.out_width);
                if lo >= hi {
                    continue;
                }
                let row = &cols[((c * 9) + ky * 3 + kx) * p..((c * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src = &row[oy * g.out_width + lo..oy * g.out_width + hi];
                    scatter_add(&mut dst[lo * g.stride + kx - 1..], src, g.stride);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
