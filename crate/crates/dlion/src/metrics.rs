//! Optimality and feasibility diagnostics, plus run-log summarization.
//!
//! The central quantity is the score S(x) = <grad f(x), sign(grad f(x)) +
//! lambda x>: it is nonnegative whenever x sits inside the weight-decay box
//! and hits zero exactly at the box-constrained stationary points, so its
//! decay is the convergence signal the sign schemes are judged by.

use crate::error::{Error, Result};
use crate::math::{check_finite, check_same_len, dist_to_feasible, sign_scalar, Norm};
use crate::optim::Hyperparams;
use crate::sim::RunLog;
use crate::tol;

/// S(x) evaluated with the full-batch gradient.
///
/// Summed termwise as g_k * (sign(g_k) + lambda * x_k): with |lambda * x_k|
/// <= 1 each term is a product of same-signed factors and stays nonnegative
/// even in floating point, so the inside-the-box guarantee needs no
/// tolerance at all. Stochastic gradients have no business here; their bias
/// through the sign is uncontrolled.
pub fn kkt_score(full_grad: &[f64], x: &[f64], lambda: f64) -> Result<f64> {
    check_same_len("kkt_score", full_grad, x)?;
    check_finite("kkt_score gradient", full_grad)?;
    check_finite("kkt_score point", x)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be nonnegative and finite, got {lambda}"
        )));
    }
    let mut acc = 0.0;
    for (&g, &xk) in full_grad.iter().zip(x) {
        acc += g * (f64::from(sign_scalar(g)) + lambda * xk);
    }
    Ok(acc)
}

/// Mean of the last quarter (rounded up) of a series: the level a noisy
/// quantity hovers at after transients die out.
pub fn noise_floor(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::invalid_input("noise floor of an empty series"));
    }
    let tail = series.len().div_ceil(4);
    let slice = &series[series.len() - tail..];
    Ok(slice.iter().sum::<f64>() / tail as f64)
}

/// Per-round S(x_t) series with its running mean and settled level.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct KktReport {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub noise_floor: f64,
}

impl KktReport {
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid_input("empty score series"));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let floor = noise_floor(&scores)?;
        Ok(KktReport {
            scores,
            mean,
            noise_floor: floor,
        })
    }
}

/// Distance-to-box trace of a trajectory, checked against the per-step
/// geometric contraction that weight decay forces on every realization.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PhaseReport {
    pub dist_l2: Vec<f64>,
    pub dist_linf: Vec<f64>,
    /// dist_{t+1} / dist_t per consecutive pair; 0 when already inside,
    /// infinity on an escape from the box.
    pub ratios_l2: Vec<f64>,
    pub ratios_linf: Vec<f64>,
    /// First index (into the given trajectory) whose point lies in the box.
    pub entry_round: Option<usize>,
    /// Steps, in either norm, that contracted slower than 1 - lr*wd allows
    /// or left the box after entering.
    pub violations: usize,
}

/// Audits a trajectory against the two-phase picture: outside the box the
/// distance shrinks by at least the factor (1 - lr*wd) every single step,
/// and the box is absorbing. The trajectory should include the starting
/// point. Assumes the constant-rate schedule the statement is about.
pub fn phase1_report(trajectory: &[Vec<f64>], h: &Hyperparams) -> Result<PhaseReport> {
    if trajectory.is_empty() {
        return Err(Error::invalid_input("empty trajectory"));
    }
    h.validate()?;
    if h.weight_decay == 0.0 {
        return Err(Error::invalid_parameter(
            "zero weight decay induces no feasible box",
        ));
    }
    let lambda = h.weight_decay;
    let rate = 1.0 - h.lr * lambda;
    let mut dist_l2 = Vec::with_capacity(trajectory.len());
    let mut dist_linf = Vec::with_capacity(trajectory.len());
    for x in trajectory {
        dist_l2.push(dist_to_feasible(x, lambda, Norm::L2)?);
        dist_linf.push(dist_to_feasible(x, lambda, Norm::Linf)?);
    }
    let mut violations = 0usize;
    let mut ratios_l2 = Vec::with_capacity(trajectory.len().saturating_sub(1));
    let mut ratios_linf = Vec::with_capacity(trajectory.len().saturating_sub(1));
    for dists in [&dist_l2, &dist_linf] {
        let ratios = if std::ptr::eq(dists, &dist_l2) {
            &mut ratios_l2
        } else {
            &mut ratios_linf
        };
        for pair in dists.windows(2) {
            let (prev, next) = (pair[0], pair[1]);
            let ratio = if prev > 0.0 {
                next / prev
            } else if next == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            ratios.push(ratio);
            if ratio > rate + tol::CONTRACTION_RATIO_SLACK {
                violations += 1;
            }
        }
    }
    let entry_round = dist_linf.iter().position(|&d| d == 0.0);
    Ok(PhaseReport {
        dist_l2,
        dist_linf,
        ratios_l2,
        ratios_linf,
        entry_round,
        violations,
    })
}

/// Headline numbers for one finished run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub method: String,
    pub rounds: u64,
    pub final_full_loss: f64,
    pub best_full_loss: f64,
    pub mean_kkt_score: f64,
    pub kkt_noise_floor: f64,
    pub total_up_bits: u64,
    pub total_down_bits: u64,
    /// First 1-based round after which the iterate sat inside the box.
    pub rounds_to_feasible: Option<u64>,
    pub final_accuracy: Option<f64>,
    pub stopped_early: bool,
}

/// Folds a run log down to its summary record. Bit totals restate the
/// ledger; losses and scores come from the per-round rows.
pub fn summarize(run: &RunLog) -> Result<Summary> {
    if run.rounds.is_empty() {
        return Err(Error::invalid_input("cannot summarize a run with no rounds"));
    }
    let scores: Vec<f64> = run.rounds.iter().map(|r| r.kkt_score).collect();
    let kkt = KktReport::from_scores(scores)?;
    let best = run
        .rounds
        .iter()
        .map(|r| r.full_loss)
        .fold(f64::INFINITY, f64::min);
    let rounds_to_feasible = run
        .rounds
        .iter()
        .find(|r| r.dist_f == 0.0)
        .map(|r| r.round);
    Ok(Summary {
        method: run.config.method.name().to_string(),
        rounds: run.rounds.len() as u64,
        final_full_loss: run.rounds.last().unwrap().full_loss,
        best_full_loss: best,
        mean_kkt_score: kkt.mean,
        kkt_noise_floor: kkt.noise_floor,
        total_up_bits: run.ledger.total.up.payload_bits,
        total_down_bits: run.ledger.total.down.payload_bits,
        rounds_to_feasible,
        final_accuracy: run.final_accuracy,
        stopped_early: run.stopped_early,
    })
}
