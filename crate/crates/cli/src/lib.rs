//! Pipeline orchestration behind the `detprod` binary.

pub mod artifacts;
pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{report_epoch_curve, run_pipeline, CurveRow, PipelineOutput, ResultRow, ResultTable};
