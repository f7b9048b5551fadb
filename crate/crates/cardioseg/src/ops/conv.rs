//! GEMM-backed 2-D convolution and fractional (transposed) convolution.
//!
//! Convolution uses the cross-correlation convention (no kernel flip), so
//! weight files are unambiguous. Transposed convolution is the exact adjoint
//! of the strided forward convolution; the inner-product identity
//! `<conv(x, W), y> == <x, conv_t(y, W)>` is enforced by tests.
//!
//! Weight layouts:
//! - convolution: `(out_c, in_c, kh, kw)`
//! - transposed convolution: `(in_c, out_c, kh, kw)` — the same blob read
//!   from the other side, matching the adjoint relationship.

use super::OpError;
use crate::tensor::{Scalar, Shape, Tensor};

/// Gradients with respect to (input, weight, bias).
pub type ParamGrads<T> = (Tensor<T>, Tensor<T>, Vec<T>);

/// Spatial output size of a strided, padded convolution.
pub fn conv_output_size(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize), OpError> {
    if stride == 0 {
        return Err(OpError::InvalidArgument("stride must be >= 1".into()));
    }
    if kh == 0 || kw == 0 {
        return Err(OpError::InvalidArgument("kernel must be non-empty".into()));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(OpError::EmptyOutput {
            h,
            w,
            kh,
            kw,
            stride,
            pad,
        });
    }
    Ok((
        (h + 2 * pad - kh) / stride + 1,
        (w + 2 * pad - kw) / stride + 1,
    ))
}

/// `c[m, n] += a[m, k] * b[k, n]`, all row-major. Four output rows advance
/// together so each loaded `b` row is reused four times; the inner loops are
/// contiguous axpys that vectorize. Summation order is fixed, which keeps
/// results bitwise reproducible.
fn matmul_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut i = 0;
    while i + 4 <= m {
        let block = &mut c[i * n..(i + 4) * n];
        let (c0, rest) = block.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        let a_block = &a[i * k..(i + 4) * k];
        for p in 0..k {
            let a0 = a_block[p];
            let a1 = a_block[k + p];
            let a2 = a_block[2 * k + p];
            let a3 = a_block[3 * k + p];
            if a0 == T::ZERO && a1 == T::ZERO && a2 == T::ZERO && a3 == T::ZERO {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for ((((v0, v1), v2), v3), &bv) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(b_row)
            {
                *v0 += a0 * bv;
                *v1 += a1 * bv;
                *v2 += a2 * bv;
                *v3 += a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::ZERO {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// Blocked out-of-place transpose of a `rows x cols` row-major matrix.
fn transpose_into<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        let r_end = (rb + B).min(rows);
        for cb in (0..cols).step_by(B) {
            let c_end = (cb + B).min(cols);
            for r in rb..r_end {
                let s_row = &src[r * cols..(r + 1) * cols];
                for c in cb..c_end {
                    dst[c * rows + r] = s_row[c];
                }
            }
        }
    }
}

/// Unrolls one image `(c, h, w)` into a `(c*kh*kw, oh*ow)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    let m = oh * ow;
    for cc in 0..c {
        let x_ch = &x[cc * h * w..(cc + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (cc * kh + ki) * kw + kj;
                let col_row = &mut col[row * m..(row + 1) * m];
                for oi in 0..oh {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    let dst = &mut col_row[oi * ow..(oi + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let x_row = &x_ch[(iy as usize) * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // Valid output columns form one contiguous run.
                        let lo = pad.saturating_sub(kj).min(ow);
                        let hi = (w + pad).saturating_sub(kj).min(ow);
                        dst[..lo].fill(T::ZERO);
                        if hi > lo {
                            let src_lo = lo + kj - pad;
                            dst[lo..hi].copy_from_slice(&x_row[src_lo..src_lo + (hi - lo)]);
                        }
                        dst[hi.max(lo)..].fill(T::ZERO);
                    } else {
                        for (oj, v) in dst.iter_mut().enumerate() {
                            let ix = (oj * stride + kj) as isize - pad as isize;
                            *v = if ix >= 0 && (ix as usize) < w {
                                x_row[ix as usize]
                            } else {
                                T::ZERO
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back onto an image.
/// The caller provides a zeroed (or accumulating) `x`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    let m = oh * ow;
    for cc in 0..c {
        let x_ch = &mut x[cc * h * w..(cc + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (cc * kh + ki) * kw + kj;
                let col_row = &col[row * m..(row + 1) * m];
                for oi in 0..oh {
                    let iy = (oi * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = &mut x_ch[(iy as usize) * w..(iy as usize + 1) * w];
                    let src = &col_row[oi * ow..(oi + 1) * ow];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kj).min(ow);
                        let hi = (w + pad).saturating_sub(kj).min(ow);
                        if hi > lo {
                            let dst_lo = lo + kj - pad;
                            for (xv, &sv) in
                                x_row[dst_lo..dst_lo + (hi - lo)].iter_mut().zip(&src[lo..hi])
                            {
                                *xv += sv;
                            }
                        }
                    } else {
                        for (oj, &sv) in src.iter().enumerate() {
                            let ix = (oj * stride + kj) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                x_row[ix as usize] += sv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_args<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    out_ch: usize,
    in_ch: usize,
) -> Result<(), OpError> {
    if input.shape().c != in_ch {
        return Err(OpError::ChannelMismatch {
            input: input.shape().c,
            expect: in_ch,
        });
    }
    if bias.len() != out_ch {
        return Err(OpError::InvalidArgument(format!(
            "bias has {} entries, expected {}",
            bias.len(),
            out_ch
        )));
    }
    let _ = weight;
    Ok(())
}

/// Cross-correlation of `input (n, in_c, h, w)` with `weight (out_c, in_c, kh, kw)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    let ws = weight.shape();
    let (out_c, in_c, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    check_conv_args(input, weight, bias, out_c, in_c)?;
    let (oh, ow) = conv_output_size(s.h, s.w, kh, kw, stride, pad)?;

    let k = in_c * kh * kw;
    let m = oh * ow;
    let mut col = vec![T::ZERO; k * m];
    let mut out = Tensor::zeros(Shape::new(s.n, out_c, oh, ow));
    for b in 0..s.n {
        im2col(input.batch(b), in_c, s.h, s.w, kh, kw, stride, pad, oh, ow, &mut col);
        let out_b = out.batch_mut(b);
        for (oc, chunk) in out_b.chunks_exact_mut(m).enumerate() {
            chunk.fill(bias[oc]);
        }
        matmul_acc(out_b, weight.data(), &col, out_c, k, m);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight, and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ParamGrads<T>, OpError> {
    let s = input.shape();
    let ws = weight.shape();
    let (out_c, in_c, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    let (oh, ow) = conv_output_size(s.h, s.w, kh, kw, stride, pad)?;
    let expect = Shape::new(s.n, out_c, oh, ow);
    if grad_out.shape() != expect {
        return Err(OpError::ShapeMismatch {
            left: grad_out.shape(),
            right: expect,
        });
    }

    let k = in_c * kh * kw;
    let m = oh * ow;
    let mut col = vec![T::ZERO; k * m];
    let mut col_t = vec![T::ZERO; k * m];
    let mut weight_t = vec![T::ZERO; weight.numel()];
    transpose_into(weight.data(), out_c, k, &mut weight_t);

    let mut grad_in = Tensor::zeros(s);
    let mut grad_w = Tensor::zeros(ws);
    let mut grad_b = vec![T::ZERO; out_c];
    let mut dcol = vec![T::ZERO; k * m];

    for b in 0..s.n {
        let go_b = grad_out.batch(b);
        // dW += dOut · colᵀ
        im2col(input.batch(b), in_c, s.h, s.w, kh, kw, stride, pad, oh, ow, &mut col);
        transpose_into(&col, k, m, &mut col_t);
        matmul_acc(grad_w.data_mut(), go_b, &col_t, out_c, m, k);
        // db += row sums of dOut
        for (oc, chunk) in go_b.chunks_exact(m).enumerate() {
            let mut acc = T::ZERO;
            for &v in chunk {
                acc += v;
            }
            grad_b[oc] += acc;
        }
        // dX = col2im(Wᵀ · dOut)
        dcol.fill(T::ZERO);
        matmul_acc(&mut dcol, &weight_t, go_b, k, out_c, m);
        col2im(&dcol, in_c, s.h, s.w, kh, kw, stride, pad, oh, ow, grad_in.batch_mut(b));
    }
    Ok((grad_in, grad_w, grad_b))
}

/// Fractional convolution: the adjoint of [`conv2d`] as a forward op.
/// `input (n, in_c, h, w)`, `weight (in_c, out_c, kh, kw)`; output spatial
/// size is `(h-1)*stride + kh` per axis.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    let ws = weight.shape();
    let (in_c, out_c, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    if kh == 0 || kw == 0 {
        return Err(OpError::InvalidArgument("kernel must be non-empty".into()));
    }
    if stride == 0 {
        return Err(OpError::InvalidArgument("stride must be >= 1".into()));
    }
    check_conv_args(input, weight, bias, out_c, in_c)?;

    let oh = (s.h - 1) * stride + kh;
    let ow = (s.w - 1) * stride + kw;
    let k = out_c * kh * kw;
    let m = s.h * s.w;

    // col = Wᵀ · x, scattered back onto the upsampled canvas.
    let mut weight_t = vec![T::ZERO; weight.numel()];
    transpose_into(weight.data(), in_c, k, &mut weight_t);
    let mut col = vec![T::ZERO; k * m];
    let mut out = Tensor::zeros(Shape::new(s.n, out_c, oh, ow));
    for b in 0..s.n {
        col.fill(T::ZERO);
        matmul_acc(&mut col, &weight_t, input.batch(b), k, in_c, m);
        let out_b = out.batch_mut(b);
        col2im(&col, out_c, oh, ow, kh, kw, stride, 0, s.h, s.w, out_b);
        for (oc, chunk) in out_b.chunks_exact_mut(oh * ow).enumerate() {
            let bv = bias[oc];
            for v in chunk.iter_mut() {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`transposed_conv2d`] with respect to input, weight, and bias.
pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<ParamGrads<T>, OpError> {
    let s = input.shape();
    let ws = weight.shape();
    let (in_c, out_c, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    let oh = (s.h - 1) * stride + kh;
    let ow = (s.w - 1) * stride + kw;
    let expect = Shape::new(s.n, out_c, oh, ow);
    if grad_out.shape() != expect {
        return Err(OpError::ShapeMismatch {
            left: grad_out.shape(),
            right: expect,
        });
    }

    let k = out_c * kh * kw;
    let m = s.h * s.w;
    let mut dcol = vec![T::ZERO; k * m];
    let mut dcol_t = vec![T::ZERO; k * m];
    let mut grad_in = Tensor::zeros(s);
    let mut grad_w = Tensor::zeros(ws);
    let mut grad_b = vec![T::ZERO; out_c];

    for b in 0..s.n {
        let go_b = grad_out.batch(b);
        im2col(go_b, out_c, oh, ow, kh, kw, stride, 0, s.h, s.w, &mut dcol);
        // dX = W · dcol
        matmul_acc(grad_in.batch_mut(b), weight.data(), &dcol, in_c, k, m);
        // dW += x · dcolᵀ
        transpose_into(&dcol, k, m, &mut dcol_t);
        matmul_acc(grad_w.data_mut(), input.batch(b), &dcol_t, in_c, m, k);
        // db += channel sums of dOut
        for (oc, chunk) in go_b.chunks_exact(oh * ow).enumerate() {
            let mut acc = T::ZERO;
            for &v in chunk {
                acc += v;
            }
            grad_b[oc] += acc;
        }
    }
    Ok((grad_in, grad_w, grad_b))
}
