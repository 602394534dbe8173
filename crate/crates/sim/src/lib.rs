//! Experiment driver: one networked federation per (ε, seed) pair, with
//! per-run metrics CSVs, a seed-averaged summary and an accuracy chart.

pub mod chart;
pub mod config;
pub mod run;

use thiserror::Error;
use webfed_core::data::DataError;
use webfed_net::NetError;

pub use chart::{chart_svg, load_series, render_chart, Series};
pub use config::{parse_list, DatasetSpec, Epsilon, ExperimentConfig, Transport};
pub use run::{final_accuracy, run_experiment, run_federation, summary_csv, RunResult};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chart: {0}")]
    Render(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
}
