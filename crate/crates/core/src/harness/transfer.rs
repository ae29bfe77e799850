//! Topology-transfer experiments: direct application of a pre-trained
//! classifier to changed-topology datasets, then fine-tuning on a small
//! target sample set.

use ndarray::ArrayView4;
use serde::Serialize;

use super::dataset::{derive_seed, generate_dataset, DatasetSpec};
use super::kfold::gather;
use super::metrics::{compute_metrics, MetricsReport};
use super::HarnessError;
use crate::grid::GridModel;
use crate::nn::{fine_tune, CnnClassifier, TrainConfig};

#[derive(Debug, Clone, Serialize)]
pub struct TransferRow {
    /// Scenario tag, e.g. `G1`.
    pub dataset: String,
    pub lines: Vec<(usize, usize)>,
    pub direct: MetricsReport,
    pub fine_tuned: MetricsReport,
    /// Source-domain test accuracy after tuning (forgetting diagnostic),
    /// when source test data was provided.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_after_tune: Option<MetricsReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    pub finetune_count: usize,
    pub test_count: usize,
}

/// Run the transfer protocol over a list of line-outage scenarios. For each
/// target: generate `finetune_count + test_count` samples on the changed
/// topology, evaluate the source model directly on the held-out test block,
/// fine-tune on the tuning block, and evaluate again. Tuning and test
/// blocks are disjoint by construction (index ranges) and that disjointness
/// is asserted.
#[allow(clippy::too_many_arguments)]
pub fn run_transfer_suite(
    source_model: &CnnClassifier,
    base: &GridModel,
    scenarios: &[(String, Vec<(usize, usize)>)],
    finetune_count: usize,
    test_count: usize,
    spec_template: &DatasetSpec,
    cfg: &TrainConfig,
    source_test: Option<(&ArrayView4<f64>, &[u8])>,
) -> Result<TransferReport, HarnessError> {
    if test_count == 0 {
        return Err(HarnessError::BadSpec("transfer test_count must be positive".into()));
    }
    let mut rows = Vec::new();
    for (i, (tag, lines)) in scenarios.iter().enumerate() {
        let spec = DatasetSpec {
            disconnect: lines.clone(),
            count: finetune_count + test_count,
            master_seed: derive_seed(spec_template.master_seed, 0x7472 + i as u64),
            ..spec_template.clone()
        };
        let ds = generate_dataset(base, &spec)?;
        let tune_idx: Vec<usize> = (0..finetune_count).collect();
        let test_idx: Vec<usize> = (finetune_count..ds.len()).collect();
        assert!(tune_idx.iter().all(|i| !test_idx.contains(i)));

        let (test_x, test_y) = gather(&ds, &test_idx);
        let direct_pred = source_model.predict_batch(&test_x.view());
        let direct = compute_metrics(&direct_pred, &test_y)?;

        let (tune_x, tune_y) = gather(&ds, &tune_idx);
        let (tuned, _log) = fine_tune(source_model, &tune_x.view(), &tune_y, cfg)?;
        let tuned_pred = tuned.predict_batch(&test_x.view());
        let fine_tuned = compute_metrics(&tuned_pred, &test_y)?;

        let source_after_tune = match &source_test {
            Some((sx, sy)) => {
                let pred = tuned.predict_batch(sx);
                Some(compute_metrics(&pred, sy)?)
            }
            None => None,
        };

        rows.push(TransferRow {
            dataset: tag.clone(),
            lines: lines.clone(),
            direct,
            fine_tuned,
            source_after_tune,
        });
    }
    Ok(TransferReport { rows, finetune_count, test_count })
}

/// The canonical scenario list: `G1`..`G12` line outages.
pub fn builtin_scenarios() -> Vec<(String, Vec<(usize, usize)>)> {
    (0..crate::grid::SCENARIO_COUNT)
        .map(|i| (format!("G{}", i + 1), crate::grid::scenario_lines(i).to_vec()))
        .collect()
}
