//! Fingerprint classification: network presets, training on a split
//! dataset, top-k evaluation, activity analysis and sample-size sweeps.

mod pipeline;
mod preset;
mod report;
mod sweep;

pub use pipeline::{fit, rank, Classifier, FitConfig, FitOutcome, Preprocess};
pub use preset::{build_preset, Preset, MIN_INPUT_LENGTH};
pub use report::{
    activity_report, average_ranks, evaluate, evaluate_split, evaluate_with, spearman, top_k_hit, ActivityReport,
    ActivityRow, EvalReport, REPORT_MAGIC,
};
pub use sweep::{sample_size_sweep, sweep_to_tsv, SweepPoint};
