//! Dataset-size and window-length ablations.

use serde::Serialize;

use super::dataset::{generate_cases, window_cases, DatasetSpec, LabeledDataset};
use super::kfold::{gather, train_classifier};
use super::metrics::{compute_metrics, MetricsReport};
use super::HarnessError;
use crate::grid::GridModel;
use crate::nn::TrainConfig;

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub test_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_cache_hash: Option<String>,
}

/// 60/20/20-style split of `0..n`: validation is every 5th training-range
/// index, test is the trailing `test_count`.
fn split_indices(n: usize, test_count: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let train_end = n - test_count;
    let val: Vec<usize> = (0..train_end).filter(|i| i % 5 == 4).collect();
    let tr: Vec<usize> = (0..train_end).filter(|i| i % 5 != 4).collect();
    let test: Vec<usize> = (train_end..n).collect();
    (tr, val, test)
}

fn evaluate_split(
    ds: &LabeledDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<MetricsReport, HarnessError> {
    let (model, _) = train_classifier(ds, train_idx, val_idx, cfg)?;
    let (sx, sy) = gather(ds, test_idx);
    let pred = model.predict_batch(&sx.view());
    compute_metrics(&pred, &sy)
}

/// Train on nested subsets of one generated dataset (the smaller training
/// set is a prefix of the larger) and evaluate on a fixed held-out test set.
pub fn run_size_ablation(
    base: &GridModel,
    spec: &DatasetSpec,
    sizes: &[usize],
    test_count: usize,
    cfg: &TrainConfig,
) -> Result<AblationTable, HarnessError> {
    if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
        return Err(HarnessError::BadSpec("ablation sizes must be positive".into()));
    }
    let max_size = *sizes.iter().max().unwrap();
    let spec = DatasetSpec { count: max_size + test_count, ..spec.clone() };
    let ds = super::dataset::generate_dataset(base, &spec)?;
    let test: Vec<usize> = (max_size..max_size + test_count).collect();
    let mut rows = Vec::new();
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    for &size in &sorted {
        // nested prefix of the generation order
        let val: Vec<usize> = (0..size).filter(|i| i % 5 == 4).collect();
        let tr: Vec<usize> = (0..size).filter(|i| i % 5 != 4).collect();
        let metrics = evaluate_split(&ds, &tr, &val, &test, cfg)?;
        rows.push(AblationRow { label: size.to_string(), metrics });
    }
    Ok(AblationTable { rows, test_count, trajectory_cache_hash: None })
}

/// Train one model per moving-window length on re-windowed identical
/// trajectories; identical splits across lengths.
pub fn run_window_ablation(
    base: &GridModel,
    spec: &DatasetSpec,
    lengths: &[f64],
    test_count: usize,
    cfg: &TrainConfig,
) -> Result<AblationTable, HarnessError> {
    if lengths.is_empty() {
        return Err(HarnessError::BadSpec("no window lengths given".into()));
    }
    for &l in lengths {
        if l <= 0.0 || l > spec.post_fault_horizon {
            return Err(HarnessError::BadSpec(format!(
                "window length {l} outside (0, {}]",
                spec.post_fault_horizon
            )));
        }
    }
    let cases = generate_cases(base, spec)?;
    let n = cases.cases.len();
    if test_count + 2 > n {
        return Err(HarnessError::BadSpec("not enough samples for the test split".into()));
    }
    let (tr, val, test) = split_indices(n, test_count);
    let mut rows = Vec::new();
    for &len in lengths {
        let ds = window_cases(&cases, len);
        let metrics = evaluate_split(&ds, &tr, &val, &test, cfg)?;
        rows.push(AblationRow { label: format!("{len:.1}"), metrics });
    }
    Ok(AblationTable { rows, test_count, trajectory_cache_hash: Some(cases.cache_hash) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition() {
        let (tr, val, test) = split_indices(100, 20);
        assert_eq!(tr.len() + val.len() + test.len(), 100);
        let mut all: Vec<usize> = tr.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(test, (80..100).collect::<Vec<_>>());
    }

    #[test]
    fn nested_prefix_property() {
        // the 500-set is a prefix of the 2000-set under the same seed by
        // construction: train indices for size a are a subset of size b > a
        let a: Vec<usize> = (0..8).filter(|i| i % 5 != 4).collect();
        let b: Vec<usize> = (0..16).filter(|i| i % 5 != 4).collect();
        assert!(a.iter().all(|i| b.contains(i)));
    }

    #[test]
    fn zero_size_rejected() {
        let g = crate::grid::ne39();
        let spec = DatasetSpec::new("builtin:ne39", 4, 1);
        let cfg = TrainConfig::default();
        assert!(matches!(
            run_size_ablation(&g, &spec, &[0], 2, &cfg),
            Err(HarnessError::BadSpec(_))
        ));
    }
}
