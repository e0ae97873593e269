//! Experiment-harness library behind the `lgs` binary: dataset/split text
//! IO, flat key=value run configuration, benchmark-distribution conversion,
//! and CSV/table reporting. The numerical method itself lives in
//! [`lgs_core`].

pub mod config;
pub mod convert;
pub mod io;
pub mod report;
