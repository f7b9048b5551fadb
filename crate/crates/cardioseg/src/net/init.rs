//! Parameter initialization.
//!
//! Convolution weights draw from the fan-in-scaled uniform distribution
//! `[-sqrt(3/fan_in), +sqrt(3/fan_in)]` (variance `1/fan_in`); upsampling
//! layers start as exact bilinear interpolation kernels so early upsampling
//! is stable; all biases start at zero. Deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, NetError, NetworkSpec, WeightStore};
use crate::tensor::{Shape, Tensor};

pub fn init_xavier(spec: &NetworkSpec, seed: u64) -> Result<WeightStore<f32>, NetError> {
    let resolved = spec.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for (layer, r) in spec.layers.iter().zip(&resolved.layers) {
        let Some(shape) = r.weight_shape else { continue };
        let weight = match layer.kind {
            LayerKind::Upsample { .. } => bilinear_kernel(shape),
            _ => {
                let fan_in = (shape.c * shape.h * shape.w) as f64;
                let bound = (3.0 / fan_in).sqrt();
                let data = (0..shape.numel())
                    .map(|_| rng.gen_range(-bound..bound) as f32)
                    .collect();
                Tensor::from_vec_unchecked(shape, data)
            }
        };
        store.insert(layer.name.clone(), weight, vec![0.0f32; r.bias_len]);
    }
    Ok(store)
}

/// Bilinear interpolation weights on the channel diagonal of an
/// `(in, out, k, k)` fractional-convolution kernel; off-diagonal filters are
/// zero. Contributions across stride-2 taps sum to one, so the layer starts
/// as a true upsampler.
fn bilinear_kernel(shape: Shape) -> Tensor<f32> {
    let k = shape.h;
    debug_assert_eq!(shape.h, shape.w);
    let factor = k.div_ceil(2);
    let center = if k % 2 == 1 {
        (factor - 1) as f64
    } else {
        factor as f64 - 0.5
    };
    let taps: Vec<f64> = (0..k)
        .map(|i| 1.0 - (i as f64 - center).abs() / factor as f64)
        .collect();
    let mut w = Tensor::zeros(shape);
    for ic in 0..shape.n {
        for oc in 0..shape.c {
            if ic != oc {
                continue;
            }
            for (i, &ti) in taps.iter().enumerate() {
                for (j, &tj) in taps.iter().enumerate() {
                    *w.at_mut(ic, oc, i, j) = (ti * tj) as f32;
                }
            }
        }
    }
    w
}
