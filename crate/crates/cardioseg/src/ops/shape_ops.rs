//! Elementwise and geometry ops: ReLU, skip fusion, center cropping.

use super::OpError;
use crate::tensor::{Scalar, Shape, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.maximum(T::ZERO))
}

/// Passes gradient where the input was strictly positive; the derivative at
/// exactly zero is defined as zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(input.shape(), grad_out.shape());
    let mut grad_in = grad_out.clone();
    for (g, &x) in grad_in.data_mut().iter_mut().zip(input.data()) {
        if x <= T::ZERO {
            *g = T::ZERO;
        }
    }
    grad_in
}

/// Skip-fusion sum; backward distributes the upstream gradient unchanged to
/// both inputs, so no dedicated backward is needed.
pub fn elementwise_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, OpError> {
    if a.shape() != b.shape() {
        return Err(OpError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

/// Top-left offset of a centered crop.
pub fn crop_offsets(h: usize, w: usize, target_h: usize, target_w: usize) -> (usize, usize) {
    ((h - target_h) / 2, (w - target_w) / 2)
}

pub fn center_crop_to<T: Scalar>(
    input: &Tensor<T>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    if target_h > s.h || target_w > s.w || target_h == 0 || target_w == 0 {
        return Err(OpError::InvalidArgument(format!(
            "cannot crop {}x{} map to {target_h}x{target_w}",
            s.h, s.w
        )));
    }
    let (oy, ox) = crop_offsets(s.h, s.w, target_h, target_w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, target_h, target_w));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..target_h {
                let src = input.index(n, c, oy + y, ox);
                let dst = out.index(n, c, y, 0);
                out.data_mut()[dst..dst + target_w]
                    .copy_from_slice(&input.data()[src..src + target_w]);
            }
        }
    }
    Ok(out)
}

/// Adjoint of the crop: zero-pads the gradient back to the input extent.
pub fn center_crop_to_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let gs = grad_out.shape();
    let (oy, ox) = crop_offsets(input_shape.h, input_shape.w, gs.h, gs.w);
    let mut grad_in = Tensor::zeros(input_shape);
    for n in 0..gs.n {
        for c in 0..gs.c {
            for y in 0..gs.h {
                let dst = grad_in.index(n, c, oy + y, ox);
                let src = grad_out.index(n, c, y, 0);
                grad_in.data_mut()[dst..dst + gs.w]
                    .copy_from_slice(&grad_out.data()[src..src + gs.w]);
            }
        }
    }
    grad_in
}
