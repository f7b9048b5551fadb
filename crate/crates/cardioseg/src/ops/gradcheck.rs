//! Central finite-difference oracles shared by the op tests. Always `f64`,
//! step 1e-5, and independent of every backward implementation they check.

use crate::tensor::{Scalar, Shape, Tensor};
use rand::Rng;

pub(crate) const FD_STEP: f64 = 1e-5;

pub(crate) fn rand_tensor<R: Rng>(rng: &mut R, shape: Shape) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub(crate) fn rand_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Relative-error comparison with a floor so that near-zero pairs compare
/// absolutely.
pub(crate) fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-7 {
        return;
    }
    let rel = (analytic - numeric).abs() / denom;
    assert!(
        rel < tol,
        "{what}: analytic {analytic} vs numeric {numeric} (rel err {rel:.3e})"
    );
}

/// Checks a parametric op's input/weight/bias gradients (for upstream
/// gradient of all ones) against central differences of `forward_sum`.
pub(crate) fn fd_check<A, F>(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    analytic: A,
    forward_sum: F,
    tol: f64,
) where
    A: Fn(&Tensor<f64>, &Tensor<f64>, &[f64]) -> (Tensor<f64>, Tensor<f64>, Vec<f64>),
    F: Fn(&Tensor<f64>, &Tensor<f64>, &[f64]) -> f64,
{
    let (dx, dw, db) = analytic(x, w, b);
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let num = (forward_sum(&plus, w, b) - forward_sum(&minus, w, b)) / (2.0 * FD_STEP);
        assert_close(dx.data()[i], num, tol, &format!("d/dx[{i}]"));
    }
    for i in 0..w.numel() {
        let mut plus = w.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = w.clone();
        minus.data_mut()[i] -= FD_STEP;
        let num = (forward_sum(x, &plus, b) - forward_sum(x, &minus, b)) / (2.0 * FD_STEP);
        assert_close(dw.data()[i], num, tol, &format!("d/dw[{i}]"));
    }
    for i in 0..b.len() {
        let mut plus = b.to_vec();
        plus[i] += FD_STEP;
        let mut minus = b.to_vec();
        minus[i] -= FD_STEP;
        let num = (forward_sum(x, w, &plus) - forward_sum(x, w, &minus)) / (2.0 * FD_STEP);
        assert_close(db[i], num, tol, &format!("d/db[{i}]"));
    }
}

/// Checks a parameter-free op's input gradient against central differences.
/// `analytic` returns d(sum of outputs)/d(input).
pub(crate) fn fd_check_unary<A, F>(x: &Tensor<f64>, analytic: A, forward_sum: F, tol: f64)
where
    A: Fn(&Tensor<f64>) -> Tensor<f64>,
    F: Fn(&Tensor<f64>) -> f64,
{
    let dx = analytic(x);
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let num = (forward_sum(&plus) - forward_sum(&minus)) / (2.0 * FD_STEP);
        assert_close(dx.data()[i], num, tol, &format!("d/dx[{i}]"));
    }
}

/// Sum of elementwise products, the test-side inner product.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.to_f64() * y.to_f64()).sum()
}
