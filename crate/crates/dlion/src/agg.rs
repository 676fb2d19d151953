//! Server-side aggregation of worker sign updates.
//!
//! Workers ship ternary directions; the server reduces them to an exact
//! integer sum per coordinate and then either averages (entries are
//! multiples of 1/N) or takes a majority vote (ties break to zero). Both
//! keep the broadcast inside the unit sup-norm ball, which is the contract
//! `apply_update` enforces downstream.

use crate::error::{Error, Result};
use crate::math::sign_scalar;
use crate::wire::{SignUpdate, SumVector};

/// Which reduction the server applies to the per-coordinate vote counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggMode {
    Average,
    MajorityVote,
}

/// The broadcast vector together with the mode that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedUpdate {
    pub values: Vec<f64>,
    pub mode: AggMode,
}

/// Exact integer reduction of the workers' ternary updates.
///
/// Fails on an empty worker set or mismatched dimensions. Summation is
/// integer arithmetic, so worker order cannot matter.
pub fn sum_deltas(deltas: &[SignUpdate]) -> Result<SumVector> {
    if deltas.is_empty() {
        return Err(Error::invalid_input("no worker updates to aggregate"));
    }
    let dim = deltas[0].len();
    for (i, d) in deltas.iter().enumerate() {
        if d.len() != dim {
            return Err(Error::InvalidInput(format!(
                "worker {i} sent a {}-dim update, expected {dim}",
                d.len()
            )));
        }
    }
    SumVector::sum_of(deltas)
}

/// Average aggregation: each coordinate is s_k / N, an exact multiple of 1/N.
/// The single division happens after the integer sum, so the result does not
/// depend on the order workers reported in.
pub fn aggregate_avg(sum: &SumVector) -> AggregatedUpdate {
    let n = sum.workers() as f64;
    AggregatedUpdate {
        values: sum.values().iter().map(|&s| s as f64 / n).collect(),
        mode: AggMode::Average,
    }
}

/// Majority vote: the sign of each coordinate's vote count, ties to zero.
pub fn aggregate_majority(sum: &SumVector) -> AggregatedUpdate {
    AggregatedUpdate {
        values: sum
            .values()
            .iter()
            .map(|&s| sign_scalar(s as f64) as f64)
            .collect(),
        mode: AggMode::MajorityVote,
    }
}

/// One-call reduction from worker updates to the broadcast vector.
pub fn aggregate(deltas: &[SignUpdate], mode: AggMode) -> Result<AggregatedUpdate> {
    let sum = sum_deltas(deltas)?;
    Ok(match mode {
        AggMode::Average => aggregate_avg(&sum),
        AggMode::MajorityVote => aggregate_majority(&sum),
    })
}
