//! Command layer of the `reparam` binary: run specifications, the train /
//! merge / verify / features commands and the ablation sweep.

// NaN-rejecting `!(x > 0.0)` checks are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod runspec;
pub mod sweep;

pub use commands::{
    cmd_features, cmd_merge, cmd_train, cmd_verify, FeatureFormat, FeaturesReport, TrainReport, VerifyReport,
    DEFAULT_TOLERANCE,
};
pub use error::{CliError, Result, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
pub use runspec::{DataSource, RunSpec};
pub use sweep::{cmd_sweep, SweepAxis, SweepReport, SweepRow};

/// Parses `1,2,3` style seed lists.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds: std::result::Result<Vec<u64>, _> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect();
    match seeds {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => Err(CliError::usage("seed list is empty")),
        Err(e) => Err(CliError::usage(format!("seed list {s:?}: {e}"))),
    }
}
