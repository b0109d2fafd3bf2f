//! Dense kernels behind the tape ops: small GEMM variants, im2col/col2im
//! for "same"-padded strided convolution and its adjoint, and max-pooling.
//!
//! All loops are single-threaded with a fixed summation order, which keeps
//! every training run bit-reproducible.

use crate::scalar::Scalar;

use super::ceil_div;

/// Output extent of a "same"-padded convolution along one axis.
pub fn conv_out_len(input: usize, stride: usize) -> usize {
    ceil_div(input, stride)
}

/// (before, after) zero padding so that out = ceil(in / stride).
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = conv_out_len(input, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    let before = total / 2;
    (before, total - before)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += *x * *y;
    }
    s
}

/// C[m,n] += A[m,k] · B[k,n]
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&a_v, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_v * b_v;
            }
        }
    }
}

/// C[m,n] += Aᵀ · B, with A stored as [k,m] and B as [k,n]
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)).take(k) {
        for (&a_v, c_row) in a_row.iter().zip(c.chunks_exact_mut(n)) {
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_v * b_v;
            }
        }
    }
}

/// C[m,n] += A · Bᵀ, with A stored as [m,k] and B as [n,k]
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (c_v, b_row) in c_row.iter_mut().zip(b.chunks_exact(k)) {
            *c_v += dot(a_row, b_row);
        }
    }
}

/// Geometry of one conv application (single image plane set).
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn same(channels: usize, in_h: usize, in_w: usize, kh: usize, kw: usize, sh: usize, sw: usize) -> Self {
        let (pad_top, _) = same_padding(in_h, kh, sh);
        let (pad_left, _) = same_padding(in_w, kw, sw);
        ConvGeom {
            channels,
            in_h,
            in_w,
            kh,
            kw,
            sh,
            sw,
            out_h: conv_out_len(in_h, sh),
            out_w: conv_out_len(in_w, sw),
            pad_top,
            pad_left,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one [C,H,W] image into a [C·kh·kw, OH·OW] patch matrix.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    debug_assert_eq!(x.len(), g.channels * g.in_h * g.in_w);
    debug_assert_eq!(col.len(), g.col_rows() * g.col_cols());
    let ohw = g.col_cols();
    for c in 0..g.channels {
        let plane = &x[c * g.in_h * g.in_w..][..g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_all = &mut col[row * ohw..][..ohw];
                for oh in 0..g.out_h {
                    let ih = (oh * g.sh + ki) as isize - g.pad_top as isize;
                    let dst = &mut dst_all[oh * g.out_w..][..g.out_w];
                    if ih < 0 || ih >= g.in_h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.in_w..][..g.in_w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * g.sw + kj) as isize - g.pad_left as isize;
                        *d = if iw >= 0 && (iw as usize) < g.in_w {
                            src[iw as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back into an image.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    debug_assert_eq!(x.len(), g.channels * g.in_h * g.in_w);
    debug_assert_eq!(col.len(), g.col_rows() * g.col_cols());
    let ohw = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.in_h * g.in_w..][..g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_all = &col[row * ohw..][..ohw];
                for oh in 0..g.out_h {
                    let ih = (oh * g.sh + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    let src = &src_all[oh * g.out_w..][..g.out_w];
                    let dst = &mut plane[ih as usize * g.in_w..][..g.in_w];
                    for (ow, &s) in src.iter().enumerate() {
                        let iw = (ow * g.sw + kj) as isize - g.pad_left as isize;
                        if iw >= 0 && (iw as usize) < g.in_w {
                            dst[iw as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Max-pool one [C,H,W] image with ceil-mode partial edge windows.
/// Returns per-output-cell flat argmax indices into the input plane array;
/// ties resolve to the first element in row-major scan order.
pub fn maxpool<T: Scalar>(
    x: &[T],
    channels: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let oh_n = ceil_div(h, ph);
    let ow_n = ceil_div(w, pw);
    debug_assert_eq!(out.len(), channels * oh_n * ow_n);
    for c in 0..channels {
        let plane = &x[c * h * w..][..h * w];
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let h_end = (oh * ph + ph).min(h);
                let w_end = (ow * pw + pw).min(w);
                let mut best_idx = oh * ph * w + ow * pw;
                let mut best = plane[best_idx];
                for ih in oh * ph..h_end {
                    for iw in ow * pw..w_end {
                        let idx = ih * w + iw;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * oh_n + oh) * ow_n + ow;
                out[o] = best;
                argmax[o] = c * h * w + best_idx;
            }
        }
    }
}
