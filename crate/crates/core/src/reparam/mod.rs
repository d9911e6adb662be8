//! High-rank factorization of dense layers and its exact inverse.
//!
//! During training a dense `m -> n` layer is replaced by an activation-free
//! chain `m -> r n -> ... -> r n -> n`. Because the chain is affine it folds
//! back to one layer: for a pair, `W = W2 W1` and `b = W2 b1 + b2`; longer
//! chains fold left to right.

mod chain;
mod merge;
mod plan;

pub use chain::{expand_linear, HrfChain, MAX_DEPTH, STANDARD_RATIOS};
pub use merge::{merge_chain, merge_chain_with_report, merge_layers, merge_pair, MergeReport, DEFAULT_PROBES, PROBE_SEED};
pub use plan::{apply_hrf_plan, dehrf_model, dehrf_with_report, max_logit_diff, HrfPlan};

pub(crate) use chain::chain_member_path;
