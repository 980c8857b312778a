//! Confusion-matrix metrics and the paired t-test.

mod metrics;
mod ttest;

pub use metrics::{confusion, mean_accuracy, metrics, ConfusionCounts, DegenerateFlags, Metrics};
pub use ttest::{incomplete_beta, ln_gamma, paired_t_test, t_two_tailed_p, TTestResult};
