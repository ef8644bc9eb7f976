//! Precision/recall/F1 at top-1, recall@N, cross-validation over
//! sequences, throughput measurement and the encoder/attention ablation grid.

mod experiment;
mod metrics;
mod report;

pub use experiment::{
    ablation_grid, cross_validate, describe_sequence, evaluate_map, evaluate_sequence, measure_fps, AblationCell,
    AblationRow, AblationSetup, CrossValidation, Fold, FpsReport, SequenceEvaluation, FPS_REPETITIONS,
};
pub use metrics::{
    evaluate_top1, first_hit_ranks, metrics_from_outcomes, recall_at_n, recall_curve_from_ranks, search,
    top1_outcomes, EvalProtocol, Metrics, RecallCurve, Top1Outcome, DEFAULT_THRESHOLD, DEFAULT_TOP_N,
};
pub use report::{ablation_csv, folds_csv, recall_curve_csv};
