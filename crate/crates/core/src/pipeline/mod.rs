//! Dataset ingestion, the wavelet soft-threshold baseline, synthetic data and
//! experiment orchestration.

mod baseline;
mod dataset;
mod experiment;
pub mod synth;

pub use baseline::{baseline_wavelet_threshold, soft_threshold, universal_threshold};
pub use dataset::{hash_images, ingest, split, training_patches, val_count, DatasetManifest};
pub use experiment::{
    cache_key, evaluate_directory, run_experiment, DatasetSource, DatasetSpec, ExperimentReport, ExperimentSpec,
    FusionKey, Method, ReportRow, EVAL_CSV, EVAL_MD, REPORT_CSV, REPORT_MD,
};
