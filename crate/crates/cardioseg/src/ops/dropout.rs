//! Inverted dropout: survivors are rescaled at train time so that inference
//! is a pure identity.

use super::OpError;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

/// Bernoulli keep mask saved by the train-mode forward pass.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub ratio: f64,
}

fn check_ratio(ratio: f64) -> Result<(), OpError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(OpError::InvalidArgument(format!(
            "dropout ratio must be in [0, 1), got {ratio}"
        )));
    }
    Ok(())
}

pub fn dropout_train<T: Scalar, R: Rng>(
    input: &Tensor<T>,
    ratio: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, DropoutMask), OpError> {
    check_ratio(ratio)?;
    let scale = T::from_f64(1.0 / (1.0 - ratio));
    let mut keep = Vec::with_capacity(input.numel());
    let mut out = input.clone();
    for v in out.data_mut() {
        let k = rng.gen::<f64>() >= ratio;
        keep.push(k);
        *v = if k { *v * scale } else { T::ZERO };
    }
    Ok((out, DropoutMask { keep, ratio }))
}

pub fn dropout_eval<T: Scalar>(input: &Tensor<T>, ratio: f64) -> Result<Tensor<T>, OpError> {
    check_ratio(ratio)?;
    Ok(input.clone())
}

pub fn dropout_backward<T: Scalar>(mask: &DropoutMask, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(mask.keep.len(), grad_out.numel());
    let scale = T::from_f64(1.0 / (1.0 - mask.ratio));
    let mut grad_in = grad_out.clone();
    for (g, &k) in grad_in.data_mut().iter_mut().zip(&mask.keep) {
        *g = if k { *g * scale } else { T::ZERO };
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_mode_is_identity() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, -2.0, 3.0, 4.0])
            .unwrap();
        assert_eq!(dropout_eval(&x, 0.5).unwrap(), x);
    }

    #[test]
    fn zero_ratio_is_identity_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, -2.0, 3.0, 4.0])
            .unwrap();
        let (y, mask) = dropout_train(&x, 0.0, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.keep.iter().all(|&k| k));
    }

    #[test]
    fn ratio_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::filled(Shape::new(1, 1, 2, 2), 1.0);
        assert!(dropout_train(&x, 1.0, &mut rng).is_err());
        assert!(dropout_eval(&x, 1.5).is_err());
    }

    #[test]
    fn survivor_fraction_and_mean_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let x = Tensor::<f64>::filled(Shape::new(1, 1, 1000, 1000), 2.0);
        let (y, mask) = dropout_train(&x, 0.5, &mut rng).unwrap();
        let survivors = mask.keep.iter().filter(|&&k| k).count() as f64 / n as f64;
        assert!(
            (0.498..=0.502).contains(&survivors),
            "survivor fraction {survivors}"
        );
        let mean: f64 = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn backward_applies_saved_mask_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::filled(Shape::new(1, 1, 4, 4), 1.0);
        let (_, mask) = dropout_train(&x, 0.25, &mut rng).unwrap();
        let g = Tensor::<f64>::filled(Shape::new(1, 1, 4, 4), 3.0);
        let gx = dropout_backward(&mask, &g);
        for (gv, &k) in gx.data().iter().zip(&mask.keep) {
            let expect = if k { 3.0 / 0.75 } else { 0.0 };
            assert_eq!(*gv, expect);
        }
    }
}
