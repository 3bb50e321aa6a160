//! Matching, tracking metrics and appearance baselines.

mod baseline;
mod hungarian;
mod metrics;

pub use baseline::{assign_by_similarity, ids_by_track, reid_baseline_tracker, ReidConfig};
pub use hungarian::{assignment_cost, hungarian};
pub use metrics::{
    association_accuracy, evaluate_sequence, id_switches, idf1, match_frame, mota, Counts, EvalReport, FrameMatch,
    SequenceReport,
};
