//! Image quality metrics, MOS aggregation and evaluation reports.

pub mod mos;
pub mod plot;
pub mod quality;
pub mod report;

pub use mos::{mos_aggregate, reference_mos, render_reference_mos, MosRecord, REFERENCE_MOS};
pub use plot::{bar_chart, write_metric_charts, write_row_charts};
pub use quality::{average_gradient, entropy, vif, VIF_MIN_SIZE};
pub use report::{evaluate_pair, summary_csv, MetricReport, MetricRow, METRIC_COLUMNS, VIF_DOMAIN};
