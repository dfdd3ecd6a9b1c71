//! Verification metrics, trial lists and result tables.

mod metrics;
mod report;
mod system;
mod trials;

pub use metrics::{compute_eer, compute_min_dcf, operating_points, score_cosine, DcfParams, OperatingPoint, ScoreSet};
pub use report::{delta_pct, Condition, EvalReport, Metrics, ReportRow, SystemScores};
pub use system::{embed_test_set, enhance_all, eval_system, score_conditions, Embeddings, TestSet};
pub use trials::{make_trials, Trial, TrialConfig, TrialList};
