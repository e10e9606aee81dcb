//! Configuration, datasets, trace files and benchmark protocols.

pub mod benchmark;
pub mod config;
pub mod data;
pub mod output;

pub use config::{FlatConfig, LambdaSetting, ModelKind, RunConfig};
pub use data::{
    load_recurrent_csv, load_regression_csv, read_covariate_rows, read_recurrent_table, read_regression_table, write_recurrent_csv, write_regression_csv,
    RecurrentNames, RecurrentTable, RegressionTable,
};
pub use output::{chain_rng, Manifest, TraceFiles};
