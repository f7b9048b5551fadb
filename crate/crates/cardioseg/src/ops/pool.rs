//! Overlapping max pooling with ceil-mode output sizing.

use super::OpError;
use crate::tensor::{Scalar, Shape, Tensor};

/// Flat input indices of each output element's maximum, saved by the forward
/// pass and consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct PoolArgmax {
    pub indices: Vec<usize>,
    pub input_shape: Shape,
}

/// Ceil-mode pooled size: `ceil((extent - kernel)/stride) + 1`. Ceil mode
/// keeps border pixels reachable instead of dropping them.
pub fn pool_output_size(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> Result<(usize, usize), OpError> {
    if kernel <= stride {
        return Err(OpError::InvalidArgument(format!(
            "pooling requires overlapping windows (kernel {kernel} <= stride {stride})"
        )));
    }
    if h < kernel || w < kernel {
        return Err(OpError::EmptyOutput {
            h,
            w,
            kh: kernel,
            kw: kernel,
            stride,
            pad: 0,
        });
    }
    let out = |extent: usize| (extent - kernel).div_ceil(stride) + 1;
    Ok((out(h), out(w)))
}

pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolArgmax), OpError> {
    let s = input.shape();
    let (oh, ow) = pool_output_size(s.h, s.w, kernel, stride)?;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut indices = vec![0usize; out.numel()];

    let mut oi_flat = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            let plane = &input.data()[base..base + s.h * s.w];
            for oy in 0..oh {
                let y0 = oy * stride;
                let y1 = (y0 + kernel).min(s.h);
                for ox in 0..ow {
                    let x0 = ox * stride;
                    let x1 = (x0 + kernel).min(s.w);
                    // First maximum in row-major order wins, deterministically.
                    let mut best = plane[y0 * s.w + x0];
                    let mut best_idx = y0 * s.w + x0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let v = plane[y * s.w + x];
                            if v > best {
                                best = v;
                                best_idx = y * s.w + x;
                            }
                        }
                    }
                    out.data_mut()[oi_flat] = best;
                    indices[oi_flat] = base + best_idx;
                    oi_flat += 1;
                }
            }
        }
    }
    Ok((
        out,
        PoolArgmax {
            indices,
            input_shape: s,
        },
    ))
}

/// Routes each output gradient to its saved argmax position.
pub fn maxpool2d_backward<T: Scalar>(ctx: &PoolArgmax, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(ctx.indices.len(), grad_out.numel());
    let mut grad_in = Tensor::zeros(ctx.input_shape);
    for (&idx, &g) in ctx.indices.iter().zip(grad_out.data()) {
        grad_in.data_mut()[idx] += g;
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{fd_check_unary, rand_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn five_by_five_window_maxima() {
        let x = Tensor::<f32>::from_vec(
            Shape::new(1, 1, 5, 5),
            (1..=25).map(|v| v as f32).collect(),
        )
        .unwrap();
        let (y, _) = maxpool2d(&x, 3, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[13.0, 15.0, 23.0, 25.0]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f32>::filled(Shape::new(1, 2, 6, 7), 3.25);
        let (y, _) = maxpool2d(&x, 3, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn ceil_mode_sizes() {
        // 64 -> 32, 100 -> 50, 5 -> 2, 7 -> 3
        assert_eq!(pool_output_size(64, 100, 3, 2).unwrap(), (32, 50));
        assert_eq!(pool_output_size(5, 7, 3, 2).unwrap(), (2, 3));
    }

    #[test]
    fn input_smaller_than_kernel_is_an_error() {
        let x = Tensor::<f32>::filled(Shape::new(1, 1, 2, 5), 0.0);
        assert!(maxpool2d(&x, 3, 2).is_err());
    }

    #[test]
    fn non_overlapping_kernel_is_an_error() {
        let x = Tensor::<f32>::filled(Shape::new(1, 1, 5, 5), 0.0);
        assert!(maxpool2d(&x, 2, 2).is_err());
    }

    #[test]
    fn backward_mass_equals_output_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, Shape::new(2, 3, 7, 6));
        let (y, ctx) = maxpool2d(&x, 3, 2).unwrap();
        let ones = Tensor::filled(y.shape(), 1.0);
        let gx = maxpool2d_backward(&ctx, &ones);
        let mass: f64 = gx.data().iter().sum();
        assert_eq!(mass, y.numel() as f64);
    }

    #[test]
    fn pool_gradient_matches_finite_differences() {
        // Random continuous values make ties measure-zero, so the max is
        // locally linear and finite differences are valid.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, Shape::new(1, 2, 6, 5));
        fd_check_unary(
            &x,
            |x| {
                let (y, ctx) = maxpool2d(x, 3, 2).unwrap();
                maxpool2d_backward(&ctx, &Tensor::filled(y.shape(), 1.0))
            },
            |x| maxpool2d(x, 3, 2).unwrap().0.data().iter().sum::<f64>(),
            1e-4,
        );
    }
}
