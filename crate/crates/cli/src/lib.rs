//! Library side of the `pathscore` command-line tool: configuration,
//! experiment runner and deterministic identity checks.

// `!(a > b)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod identities;
pub mod run;

pub use config::RunConfig;
pub use run::{execute, run, RunReport};
