//! Per-frame metrics, confusion matrices, hierarchy consistency, early
//! identification curves and the comparison report.

mod metrics;
mod report;

pub use metrics::{confusion_matrix, consistency_rate, early_curve, per_class_recall, per_frame_accuracy, EarlyCurve};
pub use report::{evaluate, predict_demo, predict_demo_nn_hmm, write_report, DemoPrediction, EvalReport, RunMeta, DECILES};
