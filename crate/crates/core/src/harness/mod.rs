//! Scenario files, experiment runs and result reports.

pub mod experiment;
pub mod instance;
pub mod report;
pub mod scenario;

pub use experiment::{
    compute_throughput, compute_two_tier_gain, run_experiment, run_repetition, two_tier_gain, Gains, MetricsRow,
};
pub use instance::{build_instance, derive_seed, form_groups, Instance, Stream};
pub use report::{mean_sd, to_csv, to_table, CSV_HEADER};
pub use scenario::{load_scenario, AlgorithmName, Scenario};
