//! Per-pixel softmax and the fused multinomial logistic loss.

use super::OpError;
use crate::tensor::{Scalar, Tensor};

/// Channel-wise softmax at every pixel, stabilized by max subtraction.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let s = logits.shape();
    let plane = s.hw();
    let mut out = logits.clone();
    for n in 0..s.n {
        for p in 0..plane {
            let mut max = T::from_f64(f64::NEG_INFINITY);
            for c in 0..s.c {
                max = max.maximum(logits.data()[(n * s.c + c) * plane + p]);
            }
            let mut sum = T::ZERO;
            for c in 0..s.c {
                let idx = (n * s.c + c) * plane + p;
                let e = (logits.data()[idx] - max).exp();
                out.data_mut()[idx] = e;
                sum += e;
            }
            for c in 0..s.c {
                let idx = (n * s.c + c) * plane + p;
                out.data_mut()[idx] /= sum;
            }
        }
    }
    out
}

/// Mean negative log-likelihood over all pixels, plus its gradient
/// `(softmax - onehot) / (n*h*w)` with respect to the logits.
///
/// `labels` is the row-major `n*h*w` class-index mask.
pub fn softmax_xent_pixelwise<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
) -> Result<(f64, Tensor<T>), OpError> {
    let s = logits.shape();
    let plane = s.hw();
    let pixels = s.n * plane;
    if labels.len() != pixels {
        return Err(OpError::InvalidArgument(format!(
            "label mask has {} entries, logits have {} pixels",
            labels.len(),
            pixels
        )));
    }
    let classes = s.c;
    let inv_pixels = T::from_f64(1.0 / pixels as f64);

    let mut grad = softmax_channels(logits);
    let mut loss = 0.0f64;
    for n in 0..s.n {
        for p in 0..plane {
            let label = labels[n * plane + p] as usize;
            if label >= classes {
                return Err(OpError::LabelOutOfRange { label, classes });
            }
            let idx = (n * s.c + label) * plane + p;
            // log of the already-normalized probability; the max-subtracted
            // path keeps this finite for any finite logits.
            loss -= grad.data()[idx].to_f64().ln();
            grad.data_mut()[idx] -= T::ONE;
        }
    }
    for g in grad.data_mut() {
        *g *= inv_pixels;
    }
    Ok((loss / pixels as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{assert_close, rand_tensor, FD_STEP};
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_cost_ln_two() {
        let logits = Tensor::<f64>::filled(Shape::new(1, 2, 4, 4), 0.3);
        let labels = vec![0u8; 16];
        let (loss, _) = softmax_xent_pixelwise(&logits, &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn softmax_normalizes_every_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let logits = rand_tensor(&mut rng, Shape::new(2, 3, 5, 4));
        let p = softmax_channels(&logits);
        let s = p.shape();
        for n in 0..s.n {
            for px in 0..s.hw() {
                let total: f64 = (0..s.c).map(|c| p.data()[(n * s.c + c) * s.hw() + px]).sum();
                assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let logits = Tensor::<f64>::filled(Shape::new(1, 2, 1, 2), 0.0);
        assert!(matches!(
            softmax_xent_pixelwise(&logits, &[0, 2]),
            Err(OpError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let logits = rand_tensor(&mut rng, Shape::new(1, 3, 3, 4));
        let labels: Vec<u8> = (0..12).map(|_| rng.gen_range(0..3) as u8).collect();
        let (_, grad) = softmax_xent_pixelwise(&logits, &labels).unwrap();
        for i in 0..logits.numel() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= FD_STEP;
            let (lp, _) = softmax_xent_pixelwise(&plus, &labels).unwrap();
            let (lm, _) = softmax_xent_pixelwise(&minus, &labels).unwrap();
            assert_close(grad.data()[i], (lp - lm) / (2.0 * FD_STEP), 1e-4, "dloss/dlogit");
        }
    }
}
