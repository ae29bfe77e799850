//! Adam training loop, early stopping, and fine-tuning.

use ndarray::{Array4, ArrayView4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::softmax_cross_entropy;
use super::model::{grad_slice, CnnClassifier, Mode};
use super::NnError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Early-stop patience on validation accuracy, in epochs.
    pub patience: usize,
    /// Fine-tuning: learning-rate scale and epoch budget.
    pub fine_tune_lr_scale: f64,
    pub fine_tune_epochs: usize,
    /// Fine-tuning ablation: update only the dense head.
    pub freeze_conv: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 5,
            fine_tune_lr_scale: 0.1,
            fine_tune_epochs: 10,
            freeze_conv: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept (0 = the initial weights).
    pub chosen_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Labeled window batches for training/validation.
pub struct TrainData<'a> {
    pub x: ArrayView4<'a, f64>,
    pub y: &'a [u8],
    pub val_x: ArrayView4<'a, f64>,
    pub val_y: &'a [u8],
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    fn new(sizes: &[usize]) -> Adam {
        Adam {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }
}

fn accuracy(model: &CnnClassifier, x: &ArrayView4<f64>, y: &[u8]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let pred = model.predict_batch(x);
    let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    hits as f64 / y.len() as f64
}

/// Train a copy of `model` by mini-batch Adam on softmax cross-entropy,
/// keeping the weights of the best validation epoch (with `consider_initial`,
/// the untouched input model competes as epoch 0 — used by fine-tuning so
/// that tuning can never end worse than direct transfer on validation).
fn train_inner(
    model: &CnnClassifier,
    data: &TrainData,
    cfg: &TrainConfig,
    learning_rate: f64,
    max_epochs: usize,
    consider_initial: bool,
) -> Result<(CnnClassifier, TrainingLog), NnError> {
    let n = data.y.len();
    if n == 0 || data.x.dim().0 != n {
        return Err(NnError::EmptyDataset);
    }
    let has = |class: u8| data.y.iter().any(|&l| l == class);
    if !has(0) || !has(1) {
        return Err(NnError::SingleClass);
    }

    let mut work = model.clone();
    work.mode = Mode::Train;
    let sizes: Vec<usize> = work.tensors_mut().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let trainable = CnnClassifier::trainable_indices(cfg.freeze_conv);

    let mut best = model.clone();
    let mut best_acc = if consider_initial {
        accuracy(model, &data.val_x, data.val_y)
    } else {
        f64::NEG_INFINITY
    };
    let mut best_epoch = 0usize;
    let mut log = TrainingLog::default();
    if consider_initial {
        log.epochs.push(EpochStats { epoch: 0, train_loss: f64::NAN, val_accuracy: best_acc });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut since_best = 0usize;

    for epoch in 1..=max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            // gather the mini-batch
            let (_, _, h, w) = data.x.dim();
            let mut bx = Array4::zeros((chunk.len(), 1, h, w));
            let mut by = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                bx.index_axis_mut(Axis(0), r).assign(&data.x.index_axis(Axis(0), i));
                by.push(data.y[i]);
            }
            let (logits, cache) = work.forward_train_cached(&bx.view(), true);
            let (loss, _, dlogits) = softmax_cross_entropy(&logits, &by);
            if !loss.is_finite() {
                return Err(NnError::DivergedLoss { epoch });
            }
            loss_sum += loss;
            batches += 1;
            let grads = work.backward_cached(&cache, &dlogits);

            adam.t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(adam.t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(adam.t as i32);
            let mut tensors = work.tensors_mut();
            for &ti in &trainable {
                let g = grad_slice(&grads[ti]);
                if g.is_empty() {
                    continue;
                }
                let m = &mut adam.m[ti];
                let v = &mut adam.v[ti];
                let p = tensors[ti].as_mut_slice();
                for k in 0..g.len() {
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                    let m_hat = m[k] / bc1;
                    let v_hat = v[k] / bc2;
                    p[k] -= learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            }
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        work.mode = Mode::Eval;
        let val_acc = accuracy(&work, &data.val_x, data.val_y);
        work.mode = Mode::Train;
        log.epochs.push(EpochStats { epoch, train_loss, val_accuracy: val_acc });
        if val_acc > best_acc {
            best_acc = val_acc;
            best_epoch = epoch;
            best = work.clone();
            best.mode = Mode::Eval;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }

    best.mode = Mode::Eval;
    best.snap_to_f32();
    log.chosen_epoch = best_epoch;
    log.best_val_accuracy = if best_acc.is_finite() { best_acc } else { 0.0 };
    Ok((best, log))
}

/// Full training run from the given (typically freshly initialized) model.
pub fn train(
    model: &CnnClassifier,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<(CnnClassifier, TrainingLog), NnError> {
    train_inner(model, data, cfg, cfg.learning_rate, cfg.max_epochs, false)
}

/// Continue training a pre-trained model on target-domain samples at a
/// reduced learning rate. The input model is untouched; with an empty
/// sample set the returned model is an identical copy (direct transfer).
/// Validation uses a held-out slice of the tuning samples, never test data.
pub fn fine_tune(
    model: &CnnClassifier,
    x: &ArrayView4<f64>,
    y: &[u8],
    cfg: &TrainConfig,
) -> Result<(CnnClassifier, TrainingLog), NnError> {
    if y.is_empty() || cfg.fine_tune_epochs == 0 {
        return Ok((model.clone(), TrainingLog::default()));
    }
    // every 5th sample is validation; remainder trains
    let n = y.len();
    let (_, _, h, w) = x.dim();
    let val_idx: Vec<usize> = (0..n).filter(|i| i % 5 == 4).collect();
    let tr_idx: Vec<usize> = (0..n).filter(|i| i % 5 != 4).collect();
    let gather = |idx: &[usize]| -> (Array4<f64>, Vec<u8>) {
        let mut gx = Array4::zeros((idx.len(), 1, h, w));
        let mut gy = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            gx.index_axis_mut(Axis(0), r).assign(&x.index_axis(Axis(0), i));
            gy.push(y[i]);
        }
        (gx, gy)
    };
    let (tx, ty) = gather(&tr_idx);
    let (vx, vy) = gather(&val_idx);
    let data = TrainData { x: tx.view(), y: &ty, val_x: vx.view(), val_y: &vy };
    train_inner(
        model,
        &data,
        cfg,
        cfg.learning_rate * cfg.fine_tune_lr_scale,
        cfg.fine_tune_epochs,
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::ArchDescriptor;
    use rand::Rng;

    /// Two Gaussian blobs rendered as windows: class 1 has a bright band.
    fn blob_dataset(n: usize, seed: u64) -> (Array4<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array4::zeros((n, 1, 6, 12));
        let mut y = Vec::with_capacity(n);
        for s in 0..n {
            let label = (s % 2) as u8;
            for i in 0..6 {
                for j in 0..12 {
                    let base = if label == 1 && i >= 2 && i < 4 { 2.0 } else { 0.0 };
                    x[(s, 0, i, j)] = base + rng.random_range(-0.3..0.3);
                }
            }
            y.push(label);
        }
        (x, y)
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 20,
            seed,
            learning_rate: 2e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_fixture_reaches_full_train_accuracy() {
        let (x, y) = blob_dataset(200, 3);
        let (vx, vy) = blob_dataset(60, 4);
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(6, 12), 1);
        let data = TrainData { x: x.view(), y: &y, val_x: vx.view(), val_y: &vy };
        let (trained, log) = train(&model, &data, &quick_cfg(5)).unwrap();
        let acc = accuracy(&trained, &x.view(), &y);
        assert!(acc == 1.0, "train accuracy {acc}, log {log:?}");
    }

    #[test]
    fn loss_decreases_initially() {
        let (x, y) = blob_dataset(120, 9);
        let (vx, vy) = blob_dataset(40, 10);
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(6, 12), 2);
        let data = TrainData { x: x.view(), y: &y, val_x: vx.view(), val_y: &vy };
        let (_, log) = train(&model, &data, &quick_cfg(6)).unwrap();
        assert!(log.epochs.len() >= 2);
        assert!(
            log.epochs[1].train_loss < log.epochs[0].train_loss,
            "epoch losses {:?}",
            &log.epochs[..2]
        );
    }

    #[test]
    fn same_seed_reproduces_weights_bitwise() {
        let (x, y) = blob_dataset(80, 11);
        let (vx, vy) = blob_dataset(24, 12);
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(6, 12), 3);
        let data = TrainData { x: x.view(), y: &y, val_x: vx.view(), val_y: &vy };
        let cfg = quick_cfg(7);
        let (a, _) = train(&model, &data, &cfg).unwrap();
        let (b, _) = train(&model, &data, &cfg).unwrap();
        let mut ma = a;
        let mut mb = b;
        let ta = ma.tensors_mut();
        let tb = mb.tensors_mut();
        for (u, v) in ta.iter().zip(tb.iter()) {
            assert_eq!(u.as_slice(), v.as_slice());
        }
    }

    #[test]
    fn single_class_dataset_rejected() {
        let (x, _) = blob_dataset(40, 13);
        let y = vec![1u8; 40];
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(6, 12), 3);
        let data = TrainData { x: x.view(), y: &y, val_x: x.view(), val_y: &y };
        assert!(matches!(train(&model, &data, &quick_cfg(1)), Err(NnError::SingleClass)));
    }

    #[test]
    fn fine_tune_empty_is_identity() {
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(6, 12), 4);
        let x = Array4::zeros((0, 1, 6, 12));
        let (tuned, log) = fine_tune(&model, &x.view(), &[], &quick_cfg(1)).unwrap();
        let w = Array4::from_shape_fn((1, 1, 6, 12), |(_, _, i, j)| (i + j) as f64 * 0.1);
        let a = model.predict_proba(&w.view());
        let b = tuned.predict_proba(&w.view());
        assert_eq!(a, b);
        assert_eq!(log.chosen_epoch, 0);
    }

    #[test]
    fn fine_tune_never_below_initial_on_validation() {
        let (x, y) = blob_dataset(100, 21);
        let (vx, vy) = blob_dataset(40, 22);
        let base = CnnClassifier::new_seeded(ArchDescriptor::new(6, 12), 5);
        let data = TrainData { x: x.view(), y: &y, val_x: vx.view(), val_y: &vy };
        let (trained, _) = train(&base, &data, &quick_cfg(8)).unwrap();
        let (fx, fy) = blob_dataset(50, 23);
        let (tuned, log) = fine_tune(&trained, &fx.view(), &fy, &quick_cfg(9)).unwrap();
        // tuned model's val accuracy (on its internal split) never below the
        // initial candidate's
        let initial_acc = log.epochs.first().map(|e| e.val_accuracy).unwrap_or(0.0);
        assert!(log.best_val_accuracy >= initial_acc);
        let _ = tuned;
    }

    #[test]
    fn full_batch_equals_batch_size_of_dataset() {
        // training with batch_size = dataset size is full-batch gradient
        // descent step for step: compare two identical configurations
        let (x, y) = blob_dataset(10, 31);
        let model = CnnClassifier::new_seeded(ArchDescriptor::new(6, 12), 6);
        let cfg_a = TrainConfig {
            batch_size: 10,
            max_epochs: 3,
            patience: 99,
            seed: 17,
            ..TrainConfig::default()
        };
        let cfg_b = TrainConfig { batch_size: 10_000, ..cfg_a.clone() };
        let data = TrainData { x: x.view(), y: &y, val_x: x.view(), val_y: &y };
        let (a, _) = train(&model, &data, &cfg_a).unwrap();
        let (b, _) = train(&model, &data, &cfg_b).unwrap();
        let mut ma = a;
        let mut mb = b;
        for (u, v) in ma.tensors_mut().iter().zip(mb.tensors_mut().iter()) {
            assert_eq!(u.as_slice(), v.as_slice());
        }
    }
}
