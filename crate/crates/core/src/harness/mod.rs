//! Experiment orchestration: dataset generation, k-fold evaluation, size and
//! window ablations, noise robustness, and the topology-transfer suite.

pub mod ablation;
pub mod dataset;
pub mod kfold;
pub mod metrics;
pub mod report;
pub mod transfer;

pub use ablation::{run_size_ablation, run_window_ablation, AblationRow, AblationTable};
pub use dataset::{
    derive_seed, generate_cases, generate_dataset, load_dataset, sample_seed, save_dataset,
    window_cases, CaseSet, DatasetSpec, LabeledDataset, NoiseSpec, SampleMeta, LABEL_DWELL_S,
    LABEL_V_THRESH,
};
pub use kfold::{kfold_evaluate, stratified_folds, train_classifier};
pub use metrics::{compute_metrics, MetricsReport};
pub use transfer::{builtin_scenarios, run_transfer_suite, TransferReport, TransferRow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid specification: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error("sample {index} could not be generated: {cause}")]
    CaseGeneration { index: usize, cause: String },
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("empty or mismatched prediction/label vectors")]
    EmptyPredictions,
    #[error("i/o error: {0}")]
    Io(String),
}

/// Evaluate a trained model on a dataset slice and return metrics.
pub fn evaluate_model(
    model: &crate::nn::CnnClassifier,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<MetricsReport, HarnessError> {
    let (x, y) = kfold::gather(ds, indices);
    let pred = model.predict_batch(&x.view());
    compute_metrics(&pred, &y)
}

/// Paired clean/noisy evaluation of one model on matched datasets.
pub fn noise_robustness(
    model: &crate::nn::CnnClassifier,
    clean: &LabeledDataset,
    noisy: &LabeledDataset,
    test_indices: &[usize],
) -> Result<(MetricsReport, MetricsReport), HarnessError> {
    let clean_m = evaluate_model(model, clean, test_indices)?;
    let noisy_m = evaluate_model(model, noisy, test_indices)?;
    Ok((clean_m, noisy_m))
}
