//! End-to-end experiments: configuration, runs and reports.

pub mod config;
pub mod experiments;
pub mod report;
pub mod stats;

pub use config::{ExperimentKind, ExperimentSpec, ModelSpec, SigmaSpec};
pub use experiments::{run, version_string, write_outputs, Outcome};
pub use report::{Relation, Report, Row, Status};
