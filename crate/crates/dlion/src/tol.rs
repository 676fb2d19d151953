//! Central numeric tolerances.
//!
//! Every tolerance used by a check suite or test lives here with its
//! justification, so a change to one bound is a reviewed decision rather than
//! a per-test tweak.

/// Per-step slack on the feasibility-distance contraction ratio. The
/// contraction holds exactly in real arithmetic; this absorbs the handful of
/// f64 roundings in the update and the distance computation.
pub const CONTRACTION_RATIO_SLACK: f64 = 1e-9;

/// Lower bound for the KKT score inside the feasible box. The score is a sum
/// of products that are individually nonnegative in real arithmetic; rounding
/// preserves their sign, so this is pure headroom.
pub const KKT_NONNEG: f64 = -1e-9;

/// Relative error allowed between cumulative compressor emissions plus
/// carried state and the cumulative raw inputs. The identity telescopes
/// exactly; the tolerance covers re-summing the inputs in a different order.
pub const CONSERVATION_REL: f64 = 1e-12;

/// Relative error between analytic gradients and central finite differences
/// for the logistic and MLP objectives (h = 1e-5 on f64).
pub const GRADCHECK_REL: f64 = 1e-5;

/// Tighter bound for the noise-free quadratic, where the objective is exactly
/// polynomial and central differences are nearly exact.
pub const GRADCHECK_QUADRATIC_REL: f64 = 1e-7;

/// Monte-Carlo unbiasedness checks accept means within this many standard
/// errors of the target.
pub const MC_SIGMAS: f64 = 3.0;

/// Looser band (in standard errors) for per-problem oracle unbiasedness,
/// where several coordinates are tested jointly.
pub const ORACLE_MC_SIGMAS: f64 = 4.0;

/// Scalar hand-traced optimizer examples (one or two arithmetic ops deep).
pub const SCALAR_TRACE_ABS: f64 = 1e-12;

/// Absolute slack for the AdamW first-step magnitude example, where the bias
/// correction divides two nearly-cancelling tiny quantities.
pub const ADAMW_TRACE_ABS: f64 = 1e-9;
