//! Evaluation harness: labeled benchmark rollouts, per-method frame
//! scoring, ROC and per-bin recognition analysis, closed-loop recovery
//! trials, and deterministic report files.

mod methods;
mod report;
mod roc;
mod testset;
mod trials;

pub use methods::{
    clean_fp_rate, detection_by_kind, flat_scores, score_test_set, traj_detected, Method,
    MethodModel, ScoredTraj,
};
pub use report::{
    bin_rows, export_heatmaps, write_bins_csv, write_metrics_csv, write_pgm, write_roc_csv,
    write_trials_csv, BinRow, MetricsRow,
};
pub use roc::{bin_sums, per_bin_score, roc_auc, RocPoint};
pub use testset::{
    build_test_set, LabeledTraj, TestSet, TestSetConfig, FAILURE_STEP, MOVER_SPEED, TRIAL_STEPS,
};
pub use trials::{run_trials, summarize_trials, TrialConfig, TrialResult, PROGRESS_MARGIN};
