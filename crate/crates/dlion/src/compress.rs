//! Gradient compressors used by the non-sign baselines.
//!
//! TernGrad quantizes to scaled ternary levels with unbiased stochastic
//! rounding. GradDrop keeps a residual and emits the top coordinates by
//! magnitude. DGC layers momentum correction, gradient clipping, and a
//! warmup keep-fraction schedule on top of the same sparsification;
//! with momentum 0 and clipping off it reduces to GradDrop exactly.

use crate::error::{Error, Result};
use crate::math::{check_finite, norm_l2, norm_linf, sign_scalar};
use crate::wire::{SignUpdate, SparseUpdate};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Per-worker compressor memory. GradDrop touches only `residual`; DGC uses
/// `residual` as its momentum buffer, `velocity` as the accumulator it
/// sparsifies, and `warmup_round` to step its keep-fraction schedule.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompressorState {
    pub residual: Vec<f64>,
    pub velocity: Vec<f64>,
    pub warmup_round: u64,
}

impl CompressorState {
    pub fn zeros(dim: usize) -> Self {
        CompressorState {
            residual: vec![0.0; dim],
            velocity: vec![0.0; dim],
            warmup_round: 0,
        }
    }
}

fn check_keep(keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "keep fraction must lie in (0, 1], got {keep}"
        )));
    }
    Ok(())
}

/// Number of coordinates a keep fraction selects out of `dim`: at least one,
/// otherwise ceil(keep * dim).
pub fn keep_count(keep: f64, dim: usize) -> usize {
    ((keep * dim as f64).ceil() as usize).max(1)
}

/// Indices of the k largest-magnitude entries, ascending. Ties on magnitude
/// break toward the lower index. Exact zeros are never selected, so the
/// result can be shorter than k.
fn top_k_nonzero(values: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..values.len() as u32)
        .filter(|&i| values[i as usize] != 0.0)
        .collect();
    order.sort_by(|&a, &b| {
        values[b as usize]
            .abs()
            .partial_cmp(&values[a as usize].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Unbiased ternary quantization against a caller-supplied scale.
///
/// Each coordinate independently becomes sign(g_k) with probability
/// |g_k| / scale, else 0; the reconstruction is level * scale. Any scale
/// at or above the gradient's sup-norm preserves unbiasedness, which is
/// what lets a worker pool share one scale per round. One uniform draw is
/// consumed per coordinate whenever scale is nonzero.
pub fn terngrad_compress_scaled(
    grad: &[f64],
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SignUpdate> {
    check_finite("terngrad gradient", grad)?;
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "terngrad scale must be finite and nonnegative, got {scale}"
        )));
    }
    let sup = norm_linf(grad);
    if sup > scale {
        return Err(Error::ContractViolation(format!(
            "terngrad scale {scale} is below the gradient sup-norm {sup}"
        )));
    }
    if scale == 0.0 {
        return Ok(SignUpdate::from_signs(vec![0i8; grad.len()]));
    }
    let levels = grad
        .iter()
        .map(|&g| {
            let p = g.abs() / scale;
            if rng.random::<f64>() < p {
                sign_scalar(g)
            } else {
                0
            }
        })
        .collect();
    Ok(SignUpdate::from_signs(levels))
}

/// Self-scaled TernGrad: quantize against the gradient's own sup-norm.
/// Returns that scale together with the ternary levels; decompression is
/// scale * level per coordinate.
pub fn terngrad_compress(grad: &[f64], rng: &mut ChaCha8Rng) -> Result<(f64, SignUpdate)> {
    check_finite("terngrad gradient", grad)?;
    let scale = norm_linf(grad);
    let levels = terngrad_compress_scaled(grad, scale, rng)?;
    Ok((scale, levels))
}

/// Residual-accumulating top-k sparsifier.
///
/// The gradient is added into the residual; the keep_count largest-magnitude
/// accumulated coordinates are emitted and zeroed, the rest stay behind.
/// Every input coordinate therefore ends up either on the wire or in the
/// residual, never both and never dropped.
pub fn graddrop_compress(
    state: &CompressorState,
    grad: &[f64],
    keep: f64,
) -> Result<(SparseUpdate, CompressorState)> {
    check_keep(keep)?;
    check_finite("graddrop gradient", grad)?;
    if grad.len() != state.residual.len() {
        return Err(Error::InvalidInput(format!(
            "gradient dim {} does not match compressor dim {}",
            grad.len(),
            state.residual.len()
        )));
    }
    let mut acc: Vec<f64> = state
        .residual
        .iter()
        .zip(grad)
        .map(|(&r, &g)| r + g)
        .collect();
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inconsistency(
            "graddrop residual became non-finite".into(),
        ));
    }
    let k = keep_count(keep, grad.len());
    let indices = top_k_nonzero(&acc, k);
    let values: Vec<f64> = indices.iter().map(|&i| acc[i as usize]).collect();
    for &i in &indices {
        acc[i as usize] = 0.0;
    }
    let update = SparseUpdate::new(indices, values, grad.len())?;
    Ok((
        update,
        CompressorState {
            residual: acc,
            velocity: state.velocity.clone(),
            warmup_round: state.warmup_round,
        },
    ))
}

/// Clipping, momentum correction, and warmup settings for DGC.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DgcConfig {
    /// Steady-state keep fraction, once warmup finishes.
    pub keep_fraction: f64,
    /// Momentum-correction coefficient applied to the gradient buffer.
    pub momentum: f64,
    /// Sup of the gradient l2 norm; gradients above it are rescaled onto it.
    /// Infinite disables clipping.
    pub clip_norm: f64,
    /// Keep fractions for the early rounds, coarsest first.
    pub warmup: Vec<f64>,
    /// How many rounds each warmup stage lasts.
    pub rounds_per_stage: usize,
}

impl DgcConfig {
    pub fn new(
        keep_fraction: f64,
        momentum: f64,
        clip_norm: f64,
        warmup: Vec<f64>,
        rounds_per_stage: usize,
    ) -> Result<Self> {
        check_keep(keep_fraction)?;
        for &w in &warmup {
            check_keep(w)?;
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!(
                "dgc momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(clip_norm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dgc clip norm must be positive, got {clip_norm}"
            )));
        }
        if rounds_per_stage == 0 {
            return Err(Error::invalid_parameter(
                "dgc rounds_per_stage must be at least 1",
            ));
        }
        Ok(DgcConfig {
            keep_fraction,
            momentum,
            clip_norm,
            warmup,
            rounds_per_stage,
        })
    }

    /// GradDrop-equivalent settings: no momentum, no clipping, no warmup.
    pub fn plain(keep_fraction: f64) -> Result<Self> {
        DgcConfig::new(keep_fraction, 0.0, f64::INFINITY, Vec::new(), 1)
    }

    /// Keep fraction in effect at a given 0-based compression round.
    pub fn keep_at(&self, round: u64) -> f64 {
        let stage = (round / self.rounds_per_stage as u64) as usize;
        if stage < self.warmup.len() {
            self.warmup[stage]
        } else {
            self.keep_fraction
        }
    }
}

impl Default for DgcConfig {
    fn default() -> Self {
        DgcConfig {
            keep_fraction: 0.04,
            momentum: 0.9,
            clip_norm: f64::INFINITY,
            warmup: vec![0.25, 0.0625, 0.015625],
            rounds_per_stage: 1,
        }
    }
}

/// One DGC compression round.
///
/// The gradient is clipped, folded into the momentum buffer u, and u is
/// folded into the accumulator v. The top coordinates of v by magnitude are
/// emitted; emitted coordinates are cleared from both u and v so stale
/// momentum never re-sends what already left.
pub fn dgc_compress(
    state: &CompressorState,
    grad: &[f64],
    cfg: &DgcConfig,
) -> Result<(SparseUpdate, CompressorState)> {
    check_finite("dgc gradient", grad)?;
    if grad.len() != state.residual.len() {
        return Err(Error::InvalidInput(format!(
            "gradient dim {} does not match compressor dim {}",
            grad.len(),
            state.residual.len()
        )));
    }
    let l2 = norm_l2(grad);
    let scale = if l2 > cfg.clip_norm {
        cfg.clip_norm / l2
    } else {
        1.0
    };
    let mut u = Vec::with_capacity(grad.len());
    let mut v = Vec::with_capacity(grad.len());
    for k in 0..grad.len() {
        let g = grad[k] * scale;
        let uk = cfg.momentum * state.residual[k] + g;
        u.push(uk);
        v.push(state.velocity[k] + uk);
    }
    if v.iter().any(|x| !x.is_finite()) || u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Inconsistency(
            "dgc compressor state became non-finite".into(),
        ));
    }
    let keep = cfg.keep_at(state.warmup_round);
    let k = keep_count(keep, grad.len());
    let indices = top_k_nonzero(&v, k);
    let values: Vec<f64> = indices.iter().map(|&i| v[i as usize]).collect();
    for &i in &indices {
        u[i as usize] = 0.0;
        v[i as usize] = 0.0;
    }
    let update = SparseUpdate::new(indices, values, grad.len())?;
    Ok((
        update,
        CompressorState {
            residual: u,
            velocity: v,
            warmup_round: state.warmup_round + 1,
        },
    ))
}
