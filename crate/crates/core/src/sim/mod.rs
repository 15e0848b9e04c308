//! Monte Carlo simulation study: data generation, condition grids,
//! replication farming, performance metrics and calibration checks.

pub mod dgp;
pub mod metrics;
pub mod sbc;
pub mod study;

pub use dgp::{collapse, generate, generate_with, DgpParams, GroundTruth, PartMapping, Simulated};
pub use metrics::{metrics, parameter_metrics, ConvergenceCounts, EstimatePoint, MetricsSummary, ParameterMetrics};
pub use sbc::{rank_uniformity_pvalue, run_sbc, SbcConfig, SbcOutcome};
pub use study::{
    delta_name, read_replications_csv, replication_seed, run_condition, run_replication, run_study,
    write_metrics_csv, write_replications_csv, Cell, CellMetrics, ConditionGrid, EstimateRecord,
    ReplicationRecord, StudyConfig, StudyOutput,
};
