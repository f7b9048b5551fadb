//! SGD-with-momentum training and transfer-learning fine-tune.
//!
//! The update follows the Caffe convention, where the velocity carries the
//! learning rate: `g = grad + weight_decay * w; v = momentum * v - lr * g;
//! w = w + v`, with biases exempt from weight decay. The learning rate
//! anneals as `base_lr * (1 - iter/max_iter)^power`. An epoch is one pass
//! over the (already augmented) training set; the per-pixel loss is averaged
//! rather than summed so the quoted base learning rates are independent of
//! image size.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use thiserror::Error;

use crate::data::Sample;
use crate::graph::{GradStore, GraphError};
use crate::metrics;
use crate::net::{self, CompiledNet, NetError, NetworkSpec, WeightStore};
use crate::ops::{self, OpError};
use crate::tensor::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("iteration {iter}: loss is not finite ({loss}); aborting")]
    NonFiniteLoss { iter: usize, loss: f64 },
    #[error("gradient for {layer} is not finite at iteration {iter}")]
    NonFiniteGradient { layer: String, iter: usize },
    #[error("gradient shape mismatch for {layer}")]
    GradientShape { layer: String },
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Overrides the derived `epochs * ceil(len/batch)` iteration budget.
    pub max_iter: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub fine_tune: bool,
    pub classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            power: 0.5,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs: 10,
            max_iter: None,
            batch_size: 1,
            seed: 0,
            fine_tune: false,
            classes: 2,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning default: a small initial learning rate to refine
    /// transplanted weights.
    pub fn fine_tune_default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            fine_tune: true,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.base_lr <= 0.0 {
            return Err(TrainError::Config(format!(
                "base_lr must be > 0, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Config("weight_decay must be >= 0".into()));
        }
        if self.power <= 0.0 {
            return Err(TrainError::Config("power must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(TrainError::Config("need at least 2 classes".into()));
        }
        Ok(())
    }

    /// Iteration budget: explicit override, or epochs x batches-per-epoch.
    pub fn resolve_max_iter(&self, dataset_len: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| self.epochs * dataset_len.div_ceil(self.batch_size))
    }
}

/// Polynomial decay schedule.
pub fn poly_lr(base_lr: f64, power: f64, iter: usize, max_iter: usize) -> Result<f64, TrainError> {
    if iter > max_iter {
        return Err(TrainError::Config(format!(
            "iteration {iter} past max_iter {max_iter}"
        )));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// Per-parameter momentum buffers plus the iteration counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub velocity: WeightStore<f32>,
    pub iter: usize,
}

impl OptimizerState {
    pub fn new(store: &WeightStore<f32>) -> Self {
        let mut velocity = WeightStore::new();
        for (name, p) in store.iter() {
            velocity.insert(
                name.clone(),
                crate::tensor::Tensor::zeros(p.weight.shape()),
                vec![0.0; p.bias.len()],
            );
        }
        OptimizerState { velocity, iter: 0 }
    }
}

/// One momentum-SGD update. Weight decay applies to weights only.
pub fn sgd_step(
    store: &mut WeightStore<f32>,
    grads: &GradStore<f32>,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    let lr = lr as f32;
    let momentum = momentum as f32;
    let decay = weight_decay as f32;
    for (name, params) in store.iter_mut() {
        let vel = state
            .velocity
            .get_mut(name)
            .ok_or_else(|| TrainError::GradientShape { layer: name.clone() })?;
        let grad = grads.get(name);
        if let Some((dw, db)) = grad {
            if dw.shape() != params.weight.shape() || db.len() != params.bias.len() {
                return Err(TrainError::GradientShape { layer: name.clone() });
            }
            if dw.find_non_finite().is_some() || db.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    layer: name.clone(),
                    iter: state.iter,
                });
            }
        }
        let (dw, db) = match grad {
            Some((dw, db)) => (Some(dw.data()), Some(db)),
            None => (None, None),
        };
        for (i, (w, v)) in params
            .weight
            .data_mut()
            .iter_mut()
            .zip(vel.weight.data_mut())
            .enumerate()
        {
            let g = dw.map(|d| d[i]).unwrap_or(0.0) + decay * *w;
            *v = momentum * *v - lr * g;
            *w += *v;
        }
        for (i, (b, v)) in params.bias.iter_mut().zip(vel.bias.iter_mut()).enumerate() {
            let g = db.map(|d| d[i]).unwrap_or(0.0);
            *v = momentum * *v - lr * g;
            *b += *v;
        }
    }
    state.iter += 1;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct IterRecord {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Dice of the argmax prediction on this iteration's samples, measured
    /// from the training-mode forward before the update.
    pub sample_dice: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dev_dice: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub iters: Vec<IterRecord>,
    pub epochs: Vec<EpochRecord>,
    pub transplanted: Vec<String>,
    pub skipped: Vec<String>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "iter,lr,loss,epoch,wall_ms")?;
        for r in &self.iters {
            writeln!(
                w,
                "{},{:.12},{:.8},{},{:.3}",
                r.iter, r.lr, r.loss, r.epoch, r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn final_dev_dice(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.dev_dice)
    }
}

/// Foreground Dice of eval-mode predictions against sample masks, averaged
/// over the set.
pub fn mean_dice<T: Scalar>(
    spec: &NetworkSpec,
    store: &WeightStore<T>,
    samples: &[Sample],
) -> Result<Option<f64>, TrainError> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for sample in samples {
        let image = sample.image.cast::<T>();
        let heat = net::forward(spec, store, &image)?;
        let pred = net::argmax_mask(&heat);
        let pred_bin: Vec<u8> = pred.iter().map(|&v| (v != 0) as u8).collect();
        let truth_bin: Vec<u8> = sample.mask.iter().map(|&v| (v != 0) as u8).collect();
        total += metrics::dice(&pred_bin, &truth_bin).expect("same geometry");
    }
    Ok(Some(total / samples.len() as f64))
}

fn batch_dice(logits: &crate::tensor::Tensor<f32>, mask: &[u8]) -> f64 {
    let pred = net::argmax_mask(logits);
    let pred_bin: Vec<u8> = pred.iter().map(|&v| (v != 0) as u8).collect();
    let truth_bin: Vec<u8> = mask.iter().map(|&v| (v != 0) as u8).collect();
    metrics::dice(&pred_bin, &truth_bin).expect("same geometry")
}

/// Full training loop: shuffled passes over `train_set` with per-iteration
/// polynomial decay, one loss/update per batch, and a dev-split Dice per
/// epoch. Deterministic for a given seed.
pub fn train(
    spec: &NetworkSpec,
    init: WeightStore<f32>,
    train_set: &[Sample],
    dev_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(WeightStore<f32>, TrainReport), TrainError> {
    train_with_report(spec, init, train_set, dev_set, cfg, TrainReport::default())
}

fn train_with_report(
    spec: &NetworkSpec,
    init: WeightStore<f32>,
    train_set: &[Sample],
    dev_set: &[Sample],
    cfg: &TrainConfig,
    mut report: TrainReport,
) -> Result<(WeightStore<f32>, TrainReport), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    init.validate_against(spec)?;
    let compiled: CompiledNet = net::compile(spec)?;

    let mut store = init;
    let mut state = OptimizerState::new(&store);
    let max_iter = cfg.resolve_max_iter(train_set.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut iter = 0usize;
    let mut epoch = 0usize;
    while iter < max_iter {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if iter >= max_iter {
                break;
            }
            let started = Instant::now();
            let lr = poly_lr(cfg.base_lr, cfg.power, iter, max_iter)?;

            let mut grads = GradStore::new();
            let mut loss_sum = 0.0;
            let mut dice_sum = 0.0;
            for &idx in batch {
                let sample = &train_set[idx];
                let trace = compiled
                    .graph
                    .forward(&store, &sample.image, true, Some(&mut rng))?;
                let logits = trace.output(compiled.logits);
                let (loss, grad) = ops::softmax_xent_pixelwise(logits, &sample.mask)?;
                loss_sum += loss;
                dice_sum += batch_dice(logits, &sample.mask);
                let back = compiled
                    .graph
                    .backward(&store, &trace, compiled.logits, grad)?;
                for (name, (dw, db)) in back.param_grads.iter() {
                    grads.accumulate(name, dw.clone(), db.clone());
                }
            }
            grads.scale(1.0 / batch.len() as f32);
            let loss = loss_sum / batch.len() as f64;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { iter, loss });
            }

            sgd_step(&mut store, &grads, &mut state, lr, cfg.momentum, cfg.weight_decay)?;
            report.iters.push(IterRecord {
                iter,
                epoch,
                lr,
                loss,
                sample_dice: dice_sum / batch.len() as f64,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            iter += 1;
        }
        let dev_dice = mean_dice(spec, &store, dev_set)?;
        report.epochs.push(EpochRecord { epoch, dev_dice });
        epoch += 1;
    }
    Ok((store, report))
}

/// Transfer learning: transplant every name-and-shape-matching layer from a
/// source weight file, initialize the rest, and train. Records the
/// transplanted and skipped layer names in the report.
pub fn fine_tune(
    spec: &NetworkSpec,
    source_weights: impl AsRef<Path>,
    train_set: &[Sample],
    dev_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(WeightStore<f32>, TrainReport), TrainError> {
    let (transplant, manifest) = net::load_weights(&source_weights, spec, false)?;
    let mut report = TrainReport {
        transplanted: manifest.transplanted.clone(),
        skipped: manifest.skipped.clone(),
        ..TrainReport::default()
    };
    if manifest.transplanted.is_empty() {
        report.warnings.push(format!(
            "no layer of {} matched the target network; fine-tuning degenerates to random init",
            source_weights.as_ref().display()
        ));
    }
    let mut store = net::init_xavier(spec, cfg.seed)?;
    store.overlay(transplant);
    train_with_report(spec, store, train_set, dev_set, cfg, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::net::{default_spec, init_xavier, load_weights, NetworkSpec};
    use crate::tensor::{Shape, Tensor};

    fn tiny_spec(classes: usize) -> NetworkSpec {
        NetworkSpec::parse(&format!(
            "data input channels=1\n\
             conv_a conv out=8 kernel=3 stride=1 pad=1\n\
             relu_a relu\n\
             mvn_a mvn\n\
             conv_b conv out=8 kernel=3 stride=1 pad=1\n\
             relu_b relu\n\
             mvn_b mvn\n\
             score score-conv out={classes} kernel=1 stride=1 pad=0\n\
             prob softmax\n"
        ))
        .unwrap()
    }

    /// Bright disc on dark background with the matching mask.
    fn disc_sample(size: usize, cx: f64, cy: f64, radius: f64) -> Sample {
        let mut pixels = vec![0.0f32; size * size];
        let mut mask = vec![0u8; size * size];
        for r in 0..size {
            for c in 0..size {
                let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                if d <= radius {
                    pixels[r * size + c] = 1000.0;
                    mask[r * size + c] = 1;
                } else {
                    pixels[r * size + c] = 100.0;
                }
            }
        }
        let normalized = crate::data::mvn_normalize(&pixels);
        Sample {
            id: "disc".into(),
            aug: "orig".into(),
            image: Tensor::from_vec(Shape::new(1, 1, size, size), normalized).unwrap(),
            mask,
            spacing_mm: (1.0, 1.0),
        }
    }

    #[test]
    fn poly_lr_examples() {
        assert_eq!(poly_lr(0.01, 0.5, 0, 100).unwrap(), 0.01);
        assert!((poly_lr(0.01, 0.5, 50, 100).unwrap() - 0.0070710678).abs() < 1e-10);
        assert_eq!(poly_lr(0.01, 0.5, 100, 100).unwrap(), 0.0);
        assert!(poly_lr(0.01, 0.5, 101, 100).is_err());
    }

    #[test]
    fn poly_lr_is_strictly_decreasing() {
        for power in [0.3, 0.5, 1.0, 2.0] {
            let mut last = f64::INFINITY;
            for iter in 0..=200 {
                let lr = poly_lr(0.01, power, iter, 200).unwrap();
                assert!(lr < last, "power {power} iter {iter}");
                last = lr;
            }
        }
    }

    fn single_param_store(w: f32) -> WeightStore<f32> {
        let mut store = WeightStore::new();
        store.insert(
            "layer",
            Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![w]).unwrap(),
            vec![0.5f32],
        );
        store
    }

    #[test]
    fn sgd_hand_worked_update() {
        let mut store = single_param_store(1.0);
        let mut state = OptimizerState::new(&store);
        let mut grads = GradStore::new();
        grads.accumulate(
            "layer",
            Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.5f32]).unwrap(),
            vec![0.0],
        );
        sgd_step(&mut store, &grads, &mut state, 0.01, 0.9, 0.0005).unwrap();
        let p = store.get("layer").unwrap();
        assert!((p.weight.data()[0] - 0.994995).abs() < 1e-7);
        let v = state.velocity.get("layer").unwrap();
        assert!((v.weight.data()[0] + 0.005005).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut store = single_param_store(1.25);
        let mut state = OptimizerState::new(&store);
        let grads = GradStore::new();
        for _ in 0..5 {
            sgd_step(&mut store, &grads, &mut state, 0.1, 0.9, 0.0).unwrap();
        }
        assert_eq!(store.get("layer").unwrap().weight.data()[0], 1.25);
        assert_eq!(store.get("layer").unwrap().bias[0], 0.5);
    }

    #[test]
    fn without_momentum_and_decay_reduces_to_gradient_descent() {
        let mut store = single_param_store(1.0);
        let mut state = OptimizerState::new(&store);
        let mut grads = GradStore::new();
        grads.accumulate(
            "layer",
            Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.5f32]).unwrap(),
            vec![0.0],
        );
        sgd_step(&mut store, &grads, &mut state, 0.01, 0.0, 0.0).unwrap();
        let expect = 1.0f32 - 0.01f32 * 0.5f32;
        assert_eq!(store.get("layer").unwrap().weight.data()[0], expect);
    }

    #[test]
    fn weight_decay_shrinks_weights_but_not_biases() {
        let mut store = single_param_store(2.0);
        let mut state = OptimizerState::new(&store);
        let grads = GradStore::new(); // no gradients at all
        let mut last = 2.0f32;
        for _ in 0..10 {
            sgd_step(&mut store, &grads, &mut state, 0.1, 0.0, 0.01).unwrap();
            let w = store.get("layer").unwrap().weight.data()[0];
            assert!(w < last);
            last = w;
        }
        assert_eq!(store.get("layer").unwrap().bias[0], 0.5);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut store = single_param_store(1.0);
        let mut state = OptimizerState::new(&store);
        let mut grads = GradStore::new();
        grads.accumulate(
            "layer",
            Tensor::from_vec_unchecked(Shape::new(1, 1, 1, 1), vec![f32::NAN]),
            vec![0.0],
        );
        assert!(matches!(
            sgd_step(&mut store, &grads, &mut state, 0.01, 0.9, 0.0),
            Err(TrainError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn lr_trace_follows_schedule_and_runs_are_deterministic() {
        let spec = tiny_spec(2);
        let sample = disc_sample(16, 8.0, 8.0, 4.0);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let init = init_xavier(&spec, cfg.seed).unwrap();
        let one = std::slice::from_ref(&sample);
        let (store_a, report) = train(&spec, init.clone(), one, one, &cfg).unwrap();
        let max_iter = 3;
        for r in &report.iters {
            let expect = poly_lr(cfg.base_lr, cfg.power, r.iter, max_iter).unwrap();
            assert!((r.lr - expect).abs() < 1e-12);
        }
        assert_eq!(report.iters.len(), 3);
        assert_eq!(report.epochs.len(), 3);
        assert!(report.epochs.iter().all(|e| e.dev_dice.is_some()));

        let (store_b, _) = train(&spec, init, one, one, &cfg).unwrap();
        assert_eq!(store_a, store_b);
    }

    #[test]
    fn single_sample_overfit_reaches_high_dice() {
        let spec = tiny_spec(2);
        let sample = disc_sample(24, 12.0, 11.0, 5.0);
        let cfg = TrainConfig {
            max_iter: Some(120),
            seed: 4,
            ..TrainConfig::default()
        };
        let init = init_xavier(&spec, cfg.seed).unwrap();
        let one = std::slice::from_ref(&sample);
        let (store, report) = train(&spec, init, one, &[], &cfg).unwrap();
        let dice = mean_dice(&spec, &store, one).unwrap().unwrap();
        assert!(dice >= 0.95, "overfit dice {dice}");
        let first = report.iters.first().unwrap().loss;
        let last = report.iters.last().unwrap().loss;
        assert!(last < first / 10.0, "loss {first} -> {last}");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let spec = tiny_spec(2);
        let init = init_xavier(&spec, 0).unwrap();
        assert!(matches!(
            train(&spec, init, &[], &[], &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn fine_tune_transplants_and_trains() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("src.fcnw");
        let spec = tiny_spec(2);
        let source = init_xavier(&spec, 7).unwrap();
        source.save(&path).unwrap();

        let sample = disc_sample(16, 8.0, 8.0, 4.0);
        let cfg = TrainConfig {
            max_iter: Some(1),
            ..TrainConfig::fine_tune_default()
        };
        let (_, report) =
            fine_tune(&spec, &path, std::slice::from_ref(&sample), &[], &cfg).unwrap();
        assert_eq!(report.transplanted, vec!["conv_a", "conv_b", "score"]);
        assert!(report.skipped.is_empty());
        assert!(report.warnings.is_empty());

        // A different class count transplants only the feature convs.
        let spec3 = tiny_spec(3);
        let cfg3 = TrainConfig {
            max_iter: Some(1),
            classes: 3,
            ..TrainConfig::fine_tune_default()
        };
        let mut sample3 = disc_sample(16, 8.0, 8.0, 4.0);
        sample3.mask[0] = 2; // exercise the third class
        let (_, report3) = fine_tune(&spec3, &path, &[sample3], &[], &cfg3).unwrap();
        assert_eq!(report3.transplanted, vec!["conv_a", "conv_b"]);
        assert_eq!(report3.skipped, vec!["score"]);
    }

    #[test]
    fn transplanted_layers_start_bitwise_equal_to_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("src.fcnw");
        let spec = tiny_spec(2);
        let source = init_xavier(&spec, 7).unwrap();
        source.save(&path).unwrap();
        // Load without training and compare blobs directly.
        let (store, report) = load_weights(&path, &spec, false).unwrap();
        assert_eq!(report.transplanted.len(), 3);
        for name in &report.transplanted {
            assert_eq!(store.get(name), source.get(name));
        }
    }

    #[test]
    fn default_network_trains_one_step() {
        // One iteration through the full architecture exercises every op's
        // backward at realistic shapes.
        let spec = default_spec(2, 1);
        let sample = disc_sample(32, 16.0, 16.0, 6.0);
        let cfg = TrainConfig {
            max_iter: Some(1),
            seed: 2,
            ..TrainConfig::default()
        };
        let init = init_xavier(&spec, 2).unwrap();
        let (_, report) = train(&spec, init, &[sample], &[], &cfg).unwrap();
        assert_eq!(report.iters.len(), 1);
        assert!(report.iters[0].loss.is_finite());
    }
}
