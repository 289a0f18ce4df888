//! ROC/AUC, DeLong comparisons, conditional-probability tables and the
//! rolling-origin experiment driver.

pub mod delong;
pub mod roc;
pub mod rolling;
pub mod table;

pub use delong::{delong_test, DelongResult, DEGENERATE_VARIANCE, SMALL_SAMPLE_POSITIVES};
pub use roc::{auc, roc_points, trapezoid, RocSummary};
pub use rolling::{
    default_snapshots, fit_and_score, parse_years, run_rolling_origin, write_report, AucRow, CalibrationRow,
    DelongRow, ExperimentPlan, ExperimentReport, GainRecord, ModelKind, RocRecord, YearAudit, PLAN_KEYS,
};
pub use table::{conditional_prob_table, format_conditional, ConditionalRow};
