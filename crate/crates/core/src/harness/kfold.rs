//! Stratified k-fold evaluation.

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::LabeledDataset;
use super::metrics::{compute_metrics, MetricsReport};
use super::HarnessError;
use crate::nn::{train, ArchDescriptor, CnnClassifier, TrainConfig, TrainData};

/// Disjoint equal-proportion folds with per-class round-robin dealing, so
/// fold class ratios track the global ratio.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[(l != 0) as usize].push(i);
    }
    for c in by_class.iter_mut() {
        c.shuffle(&mut rng);
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0usize;
    for class in &by_class {
        for &i in class {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    folds
}

pub(crate) fn gather(
    ds: &LabeledDataset,
    idx: &[usize],
) -> (Array4<f64>, Vec<u8>) {
    let (_, _, m, n) = ds.windows.dim();
    let mut x = Array4::zeros((idx.len(), 1, m, n));
    let mut y = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        x.index_axis_mut(Axis(0), r).assign(&ds.windows.index_axis(Axis(0), i));
        y.push(ds.labels[i]);
    }
    (x, y)
}

/// Estimate the scalar input-transform constants from a training split.
pub(crate) fn input_stats(x: &Array4<f64>) -> (f64, f64) {
    let mut mean = 0.0;
    let mut count = 0usize;
    for v in x.iter() {
        mean += v.asinh();
        count += 1;
    }
    if count == 0 {
        return (0.0, 1.0);
    }
    mean /= count as f64;
    let mut var = 0.0;
    for v in x.iter() {
        let d = v.asinh() - mean;
        var += d * d;
    }
    let std = (var / count as f64).sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Train a fresh classifier on (train, val) splits of a dataset.
pub fn train_classifier(
    ds: &LabeledDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(CnnClassifier, crate::nn::TrainingLog), HarnessError> {
    let (tx, ty) = gather(ds, train_idx);
    let (vx, vy) = gather(ds, val_idx);
    let (m, n) = ds.window_dims();
    let mut arch = ArchDescriptor::new(m, n);
    let (mu, sd) = input_stats(&tx);
    arch.input_mean = mu;
    arch.input_scale = sd;
    let model = CnnClassifier::new_seeded(arch, cfg.seed);
    let data = TrainData { x: tx.view(), y: &ty, val_x: vx.view(), val_y: &vy };
    Ok(train(&model, &data, cfg)?)
}

/// k-fold evaluation with a custom predictor (testing hook): `predict`
/// receives (train indices, test indices) and returns test predictions.
pub(crate) fn kfold_with_predictor(
    ds: &LabeledDataset,
    k: usize,
    seed: u64,
    predict: impl Fn(&[usize], &[usize]) -> Result<Vec<u8>, HarnessError>,
) -> Result<MetricsReport, HarnessError> {
    if ds.len() < k || k < 2 {
        return Err(HarnessError::BadSpec(format!(
            "k-fold needs 2 <= k <= dataset size ({} given, {} samples)",
            k,
            ds.len()
        )));
    }
    let folds = stratified_folds(&ds.labels, k, seed);
    let mut per_fold = Vec::with_capacity(k);
    for fold in &folds {
        let test_idx = fold.clone();
        let train_idx: Vec<usize> =
            (0..ds.len()).filter(|i| !test_idx.contains(i)).collect();
        let pred = predict(&train_idx, &test_idx)?;
        let truth: Vec<u8> = test_idx.iter().map(|&i| ds.labels[i]).collect();
        per_fold.push(compute_metrics(&pred, &truth)?);
    }
    Ok(MetricsReport::mean_of(per_fold))
}

/// Train one classifier per fold and average the fold metrics.
pub fn kfold_evaluate(
    ds: &LabeledDataset,
    k: usize,
    cfg: &TrainConfig,
) -> Result<MetricsReport, HarnessError> {
    kfold_with_predictor(ds, k, cfg.seed, |train_idx, test_idx| {
        // carve validation out of the training portion
        let val: Vec<usize> = train_idx.iter().copied().filter(|i| i % 5 == 4).collect();
        let tr: Vec<usize> = train_idx.iter().copied().filter(|i| i % 5 != 4).collect();
        let (model, _) = train_classifier(ds, &tr, &val, cfg)?;
        let (sx, _) = gather(ds, test_idx);
        Ok(model.predict_batch(&sx.view()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::{DatasetSpec, SampleMeta};
    use ndarray::Array4;

    fn synthetic_dataset(n: usize) -> LabeledDataset {
        // class 1 windows carry a bright band, easily separable
        let mut windows = Array4::zeros((n, 1, 4, 10));
        let mut labels = Vec::new();
        for s in 0..n {
            let label = (s % 3 == 0) as u8 as usize;
            for i in 0..4 {
                for j in 0..10 {
                    windows[(s, 0, i, j)] =
                        if label == 1 && i < 2 { 3.0 } else { 0.1 } + (s as f64 * 0.001);
                }
            }
            labels.push(label as u8);
        }
        let samples = (0..n)
            .map(|i| SampleMeta {
                index: i,
                seed: i as u64,
                load_scale: 1.0,
                fault_bus: 1,
                fault_duration: 0.1,
                label: labels[i],
                collapsed: false,
                redraws: 0,
            })
            .collect();
        LabeledDataset {
            windows,
            labels,
            samples,
            spec: DatasetSpec::new("synthetic", n, 0),
            topology_id: "synthetic".into(),
            content_hash: String::new(),
            balance_warning: false,
        }
    }

    #[test]
    fn folds_partition_and_stratify() {
        let ds = synthetic_dataset(50);
        let folds = stratified_folds(&ds.labels, 10, 42);
        let mut seen = vec![false; 50];
        for f in &folds {
            for &i in f {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&b| b), "folds must cover the dataset");
        let global_ratio = ds.labels.iter().filter(|&&l| l == 1).count() as f64 / 50.0;
        for f in &folds {
            let r = f.iter().filter(|&&i| ds.labels[i] == 1).count() as f64 / f.len() as f64;
            assert!((r - global_ratio).abs() <= 0.21, "fold ratio {r} vs {global_ratio}");
        }
    }

    #[test]
    fn oracle_classifier_scores_100() {
        let ds = synthetic_dataset(40);
        let report = kfold_with_predictor(&ds, 10, 1, |_, test_idx| {
            Ok(test_idx.iter().map(|&i| ds.labels[i]).collect())
        })
        .unwrap();
        assert_eq!(report.accuracy, 100.0);
        assert_eq!(report.f1, 100.0);
        assert_eq!(report.per_fold.as_ref().unwrap().len(), 10);
    }

    #[test]
    fn leave_one_out_boundary_runs() {
        let ds = synthetic_dataset(12);
        let report = kfold_with_predictor(&ds, 12, 3, |_, test_idx| {
            Ok(test_idx.iter().map(|&i| ds.labels[i]).collect())
        })
        .unwrap();
        assert_eq!(report.per_fold.as_ref().unwrap().len(), 12);
        assert_eq!(report.accuracy, 100.0);
    }

    #[test]
    fn cnn_kfold_on_separable_data() {
        let ds = synthetic_dataset(40);
        let cfg = TrainConfig {
            max_epochs: 8,
            batch_size: 8,
            seed: 5,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let report = kfold_evaluate(&ds, 4, &cfg).unwrap();
        assert!(report.accuracy > 90.0, "accuracy {}", report.accuracy);
    }
}
