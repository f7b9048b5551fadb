//! Mean-variance normalization as an in-network layer.
//!
//! Each (sample, channel) map is standardized to zero mean and unit variance
//! using the population (divide-by-N) variance. The epsilon guard on the
//! standard deviation maps constant channels to all zeros instead of failing,
//! which matters for near-constant apical slices after cropping.

use super::OpError;
use crate::tensor::{Scalar, Tensor};

const MVN_EPS: f64 = 1e-6;

/// Per-(sample, channel) spatial standardization with full gradient support.
pub fn mvn_layer<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    if s.hw() < 2 {
        return Err(OpError::InvalidArgument(format!(
            "mvn requires at least 2 spatial elements, got {}x{}",
            s.h, s.w
        )));
    }
    let eps = T::from_f64(MVN_EPS);
    let plane = s.hw();
    let inv_n = T::from_f64(1.0 / plane as f64);
    let mut out = Tensor::zeros(s);
    for p in 0..s.n * s.c {
        let src = &input.data()[p * plane..(p + 1) * plane];
        let dst = &mut out.data_mut()[p * plane..(p + 1) * plane];
        let mut mean = T::ZERO;
        for &v in src {
            mean += v;
        }
        mean *= inv_n;
        let mut var = T::ZERO;
        for &v in src {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_n;
        let denom = var.sqrt() + eps;
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mean) / denom;
        }
    }
    Ok(out)
}

/// Backward through both statistics. With y = (x - mu)/(s + eps):
/// dx_j = (g_j - mean(g))/(s + eps) - sum_i(g_i (x_i - mu)) * (x_j - mu) / (N s (s + eps)^2).
/// The second term vanishes for constant maps (every x_i - mu is zero).
pub fn mvn_layer_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    debug_assert_eq!(grad_out.shape(), s);
    let eps = T::from_f64(MVN_EPS);
    let plane = s.hw();
    let inv_n = T::from_f64(1.0 / plane as f64);
    let mut grad_in = Tensor::zeros(s);
    for p in 0..s.n * s.c {
        let x = &input.data()[p * plane..(p + 1) * plane];
        let g = &grad_out.data()[p * plane..(p + 1) * plane];
        let dst = &mut grad_in.data_mut()[p * plane..(p + 1) * plane];

        let mut mean = T::ZERO;
        for &v in x {
            mean += v;
        }
        mean *= inv_n;
        let mut var = T::ZERO;
        for &v in x {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_n;
        let std = var.sqrt();
        let denom = std + eps;

        let mut g_mean = T::ZERO;
        for &v in g {
            g_mean += v;
        }
        g_mean *= inv_n;
        let mut g_dot_centered = T::ZERO;
        for (&gv, &xv) in g.iter().zip(x) {
            g_dot_centered += gv * (xv - mean);
        }

        if std > T::ZERO {
            let scale = g_dot_centered * inv_n / (std * denom * denom);
            for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(x) {
                *d = (gv - g_mean) / denom - scale * (xv - mean);
            }
        } else {
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d = (gv - g_mean) / denom;
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{fd_check_unary, rand_tensor};
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn known_four_element_channel() {
        let x =
            Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = mvn_layer(&x).unwrap();
        let expect = [-1.34164, -0.44721, 0.44721, 1.34164];
        for (got, want) in y.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn constant_channel_maps_to_zeros() {
        let x = Tensor::<f32>::filled(Shape::new(2, 3, 4, 4), 7.5);
        let y = mvn_layer(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, Shape::new(1, 2, 5, 5));
        let scaled = x.map(|v| 3.7 * v - 2.0);
        let a = mvn_layer(&x).unwrap();
        let b = mvn_layer(&scaled).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn output_statistics_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, Shape::new(2, 3, 6, 7));
        let y = mvn_layer(&x).unwrap();
        let plane = y.shape().hw();
        for p in 0..y.shape().n * y.shape().c {
            let ch = &y.data()[p * plane..(p + 1) * plane];
            let mean: f64 = ch.iter().sum::<f64>() / plane as f64;
            let var: f64 = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let yy = mvn_layer(&y).unwrap();
        for (a, b) in y.data().iter().zip(yy.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn single_pixel_plane_is_an_error() {
        let x = Tensor::<f32>::filled(Shape::new(1, 1, 1, 1), 1.0);
        assert!(mvn_layer(&x).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for shape in [Shape::new(1, 1, 2, 3), Shape::new(2, 2, 4, 5), Shape::new(1, 3, 7, 2)] {
            let x = rand_tensor(&mut rng, shape);
            // Weighted sum upstream exercises the non-uniform gradient path.
            let weights = rand_tensor(&mut rng, shape);
            let w2 = weights.clone();
            fd_check_unary(
                &x,
                move |x| mvn_layer_backward(x, &weights),
                move |x| {
                    mvn_layer(x)
                        .unwrap()
                        .data()
                        .iter()
                        .zip(w2.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                },
                1e-4,
            );
        }
    }
}
