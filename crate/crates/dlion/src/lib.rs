//! Deterministic single-process simulator for distributed training with
//! sign-based optimizers (Lion, Signum) under averaging or majority-vote
//! aggregation, plus communication-efficient baselines (TernGrad, GradDrop,
//! DGC, global AdamW/Lion over averaged gradients).
//!
//! Everything a worker would put on the wire is actually bit-packed by the
//! codecs in [`wire`], and the ledger in [`bandwidth`] accounts for every bit
//! both ways. All randomness flows through counter-based streams derived from
//! one master seed, so runs are bit-reproducible, thread-count independent,
//! and resumable from checkpoints.

pub mod agg;
pub mod bandwidth;
pub mod checkpoint;
pub mod checks;
pub mod compress;
pub mod error;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod presets;
pub mod problems;
pub mod rng;
pub mod sim;
pub mod tol;
pub mod wire;

pub use error::{Error, Result};
