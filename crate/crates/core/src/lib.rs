//! Train-time high-rank factorization (HRF) of dense layers and inference-time
//! merging (deHRF) for lightweight speech Transformers.
//!
//! A dense layer `Y = W X + b` is replaced during training by an
//! activation-free chain of wider dense layers. Because nothing non-linear
//! sits between chain members the chain collapses back to a single layer of
//! the original shape, so the deployed model has exactly the parameter count
//! and FLOPs of the lightweight baseline.
//!
//! Module map:
//!
//! * [`numcore`]: matrices, dense layers, activations, a reverse-mode tape.
//! * [`reparam`]: chain expansion, pairwise and chain merging, model plans.
//! * [`model`]: ConvTransformer / Conformer / SpeechFormer lite families,
//!   registered by name behind the [`model::Family`] trait.
//! * [`audiofeat`]: 26-band log-Mel energies plus deltas (78-dim frames).
//! * [`trainkit`]: AdamW, plateau schedule, metrics, synthetic data, trainer.
//! * [`checkpoint`]: the `RPTF` tensor container and model checkpoints.

// NaN-rejecting `!(x > 0.0)` checks and index loops over matrix rows are
// deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audiofeat;
pub mod checkpoint;
pub mod error;
pub mod model;
pub mod numcore;
pub mod reparam;
pub mod trainkit;

pub use error::{CheckpointError, Error, Result};
