//! Single-node optimizer steps.
//!
//! The Lion-style update is split in two: `lion_delta` turns a gradient into
//! a ternary direction and a refreshed momentum, and `apply_update` applies
//! an aggregated direction with decoupled weight decay. The split mirrors the
//! distributed protocol, where the direction crosses the wire between the two
//! halves. Both halves of the Lion step consume the same gradient sample.
//!
//! All functions are deterministic and allocate fresh output state, so worker
//! state can move freely across threads.

use crate::error::{Error, Result};
use crate::math::{check_finite, check_same_len, norm_linf, sign_scalar};
use crate::wire::SignUpdate;

/// Shared optimizer hyperparameters: direction blend beta1, momentum blend
/// beta2, learning rate, decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Hyperparams {
    pub fn new(beta1: f64, beta2: f64, lr: f64, weight_decay: f64) -> Result<Self> {
        let h = Hyperparams {
            beta1,
            beta2,
            lr,
            weight_decay,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {beta}"
                )));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lr must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weight_decay must be nonnegative and finite, got {}",
                self.weight_decay
            )));
        }
        // The pre-feasibility contraction factor is 1 - lr * weight_decay;
        // it must stay positive for the decay geometry to make sense.
        if self.lr * self.weight_decay >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "lr * weight_decay must be < 1, got {}",
                self.lr * self.weight_decay
            )));
        }
        Ok(())
    }

    /// Same hyperparameters with a scheduled learning rate swapped in.
    pub fn with_lr(&self, lr: f64) -> Result<Self> {
        Hyperparams::new(self.beta1, self.beta2, lr, self.weight_decay)
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            beta1: 0.9,
            beta2: 0.99,
            lr: 5e-5,
            weight_decay: 5e-3,
        }
    }
}

/// Lion momentum, zero-initialized.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LionState {
    pub m: Vec<f64>,
}

impl LionState {
    pub fn zeros(dim: usize) -> Self {
        LionState { m: vec![0.0; dim] }
    }
}

/// Signum momentum with its single blend coefficient. beta = 0 degenerates to
/// sign-SGD (the momentum is just the latest gradient).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignumState {
    pub m: Vec<f64>,
    pub beta: f64,
}

impl SignumState {
    pub fn zeros(dim: usize, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!(
                "signum beta must lie in [0, 1), got {beta}"
            )));
        }
        Ok(SignumState {
            m: vec![0.0; dim],
            beta,
        })
    }
}

/// AdamW moments plus the step counter driving bias correction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamWState {
    pub fn zeros(dim: usize) -> Self {
        AdamWState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// AdamW moment coefficients and the denominator stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        for (name, beta) in [("adam beta1", beta1), ("adam beta2", beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "adam eps must be positive, got {eps}"
            )));
        }
        Ok(AdamParams { beta1, beta2, eps })
    }
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Ternary direction from the beta1 blend of momentum and gradient, plus the
/// beta2-refreshed momentum. The parameter vector is untouched here; apply
/// the (aggregated) direction separately with `apply_update`.
pub fn lion_delta(
    state: &LionState,
    grad: &[f64],
    h: &Hyperparams,
) -> Result<(SignUpdate, LionState)> {
    check_same_len("lion_delta", &state.m, grad)?;
    check_finite("lion_delta gradient", grad)?;
    let mut delta = Vec::with_capacity(grad.len());
    let mut m = Vec::with_capacity(grad.len());
    for (&mi, &gi) in state.m.iter().zip(grad) {
        delta.push(sign_scalar(h.beta1 * mi + (1.0 - h.beta1) * gi));
        m.push(h.beta2 * mi + (1.0 - h.beta2) * gi);
    }
    check_finite("lion_delta momentum", &m)?;
    Ok((SignUpdate::from_signs(delta), LionState { m }))
}

/// Signum: refresh the momentum first, then sign it.
pub fn signum_delta(state: &SignumState, grad: &[f64]) -> Result<(SignUpdate, SignumState)> {
    check_same_len("signum_delta", &state.m, grad)?;
    check_finite("signum_delta gradient", grad)?;
    let beta = state.beta;
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(grad)
        .map(|(&mi, &gi)| beta * mi + (1.0 - beta) * gi)
        .collect();
    check_finite("signum_delta momentum", &m)?;
    let delta: Vec<i8> = m.iter().map(|&v| sign_scalar(v)).collect();
    Ok((
        SignUpdate::from_signs(delta),
        SignumState { m, beta },
    ))
}

/// x' = x - lr * (delta + weight_decay * x).
///
/// `delta` is the broadcast aggregate; both aggregation modes keep it inside
/// the unit sup-norm ball, and that bound is what confines iterates to the
/// feasibility box, so it is enforced here as a hard contract.
pub fn apply_update(x: &[f64], delta: &[f64], h: &Hyperparams) -> Result<Vec<f64>> {
    check_same_len("apply_update", x, delta)?;
    check_finite("apply_update params", x)?;
    check_finite("apply_update delta", delta)?;
    let sup = norm_linf(delta);
    if sup > 1.0 {
        return Err(Error::ContractViolation(format!(
            "aggregated update has sup-norm {sup} > 1"
        )));
    }
    let out: Vec<f64> = x
        .iter()
        .zip(delta)
        .map(|(&xi, &di)| xi - h.lr * (di + h.weight_decay * xi))
        .collect();
    check_finite("apply_update output", &out)?;
    Ok(out)
}

/// Unconstrained variant of the same decayed step, for methods whose
/// broadcast is a raw (decompressed) gradient average rather than a bounded
/// sign aggregate.
pub fn apply_gradient_step(x: &[f64], grad_dir: &[f64], h: &Hyperparams) -> Result<Vec<f64>> {
    check_same_len("apply_gradient_step", x, grad_dir)?;
    let out: Vec<f64> = x
        .iter()
        .zip(grad_dir)
        .map(|(&xi, &di)| xi - h.lr * (di + h.weight_decay * xi))
        .collect();
    check_finite("apply_gradient_step output", &out)?;
    Ok(out)
}

/// Bias-corrected AdamW with decoupled weight decay:
/// x' = x - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * x).
pub fn adamw_step(
    state: &AdamWState,
    x: &[f64],
    grad: &[f64],
    h: &Hyperparams,
    adam: &AdamParams,
) -> Result<(Vec<f64>, AdamWState)> {
    check_same_len("adamw_step", x, grad)?;
    check_finite("adamw_step gradient", grad)?;
    if !(adam.eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "adam eps must be positive, got {}",
            adam.eps
        )));
    }
    let step = state.step + 1;
    let bc1 = 1.0 - adam.beta1.powi(step as i32);
    let bc2 = 1.0 - adam.beta2.powi(step as i32);
    let mut m = Vec::with_capacity(x.len());
    let mut v = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let mk = adam.beta1 * state.m[k] + (1.0 - adam.beta1) * grad[k];
        let vk = adam.beta2 * state.v[k] + (1.0 - adam.beta2) * grad[k] * grad[k];
        let m_hat = mk / bc1;
        let v_hat = vk / bc2;
        out.push(x[k] - h.lr * (m_hat / (v_hat.sqrt() + adam.eps) + h.weight_decay * x[k]));
        m.push(mk);
        v.push(vk);
    }
    check_finite("adamw_step output", &out)?;
    Ok((out, AdamWState { m, v, step }))
}

/// Learning-rate schedules. Cosine anneals from the base rate toward (but
/// never exactly to) zero across the configured horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    Cosine,
}

/// Multiplier for the base learning rate at 1-based `round` of `total`.
pub fn lr_factor(schedule: Schedule, round: usize, total: usize) -> f64 {
    debug_assert!(round >= 1 && round <= total);
    match schedule {
        Schedule::Constant => 1.0,
        Schedule::Cosine => {
            0.5 * (1.0 + (std::f64::consts::PI * (round - 1) as f64 / total as f64).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tol;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::new(0.9, 0.99, 1e-4, 0.01).is_ok());
        assert!(Hyperparams::new(0.0, 0.99, 1e-4, 0.01).is_err());
        assert!(Hyperparams::new(0.9, 1.0, 1e-4, 0.01).is_err());
        assert!(Hyperparams::new(0.9, 0.99, 0.0, 0.01).is_err());
        assert!(Hyperparams::new(0.9, 0.99, 1e-4, -0.1).is_err());
        assert!(Hyperparams::new(0.9, 0.99, 2.0, 0.5).is_err()); // lr*wd = 1
        assert!(Hyperparams::default().validate().is_ok());
    }

    #[test]
    fn lion_delta_scalar_trace() {
        let h = Hyperparams::new(0.9, 0.99, 1e-4, 0.0).unwrap();
        let s = LionState { m: vec![0.5] };
        let (delta, s2) = lion_delta(&s, &[-1.0], &h).unwrap();
        // sign(0.9*0.5 + 0.1*(-1)) = sign(0.35)
        assert_eq!(delta.as_slice(), &[1]);
        assert!(close(s2.m[0], 0.485, tol::SCALAR_TRACE_ABS));
    }

    #[test]
    fn lion_delta_zero_fixed_point() {
        let h = Hyperparams::default();
        let s = LionState::zeros(1);
        let (delta, s2) = lion_delta(&s, &[0.0], &h).unwrap();
        assert_eq!(delta.as_slice(), &[0]);
        assert_eq!(s2.m, vec![0.0]);
    }

    #[test]
    fn lion_delta_agreement_case() {
        // With m = g = 1 both blends are convex combinations of equal values;
        // 1 - beta is exact for beta >= 0.5 (Sterbenz), so m' is exactly 1.
        let h = Hyperparams::default();
        let s = LionState { m: vec![1.0] };
        let (delta, s2) = lion_delta(&s, &[1.0], &h).unwrap();
        assert_eq!(delta.as_slice(), &[1]);
        assert_eq!(s2.m, vec![1.0]);
    }

    #[test]
    fn lion_delta_length_mismatch() {
        let h = Hyperparams::default();
        let s = LionState::zeros(2);
        assert!(matches!(
            lion_delta(&s, &[1.0], &h),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn apply_update_scalar_traces() {
        let h = Hyperparams::new(0.9, 0.99, 0.1, 0.5).unwrap();
        let out = apply_update(&[1.0], &[1.0], &h).unwrap();
        assert!(close(out[0], 0.85, tol::SCALAR_TRACE_ABS)); // 1 - 0.1*(1+0.5)

        let h0 = Hyperparams::new(0.9, 0.99, 0.1, 0.0).unwrap();
        assert_eq!(apply_update(&[0.0], &[0.0], &h0).unwrap(), vec![0.0]);

        let hd = Hyperparams::new(0.9, 0.99, 0.1, 1.0).unwrap();
        let decay = apply_update(&[2.0], &[0.0], &hd).unwrap();
        assert!(close(decay[0], 1.8, tol::SCALAR_TRACE_ABS)); // (1 - lr*wd) * x
    }

    #[test]
    fn apply_update_enforces_sup_norm_contract() {
        let h = Hyperparams::default();
        assert!(matches!(
            apply_update(&[0.0], &[1.2], &h),
            Err(Error::ContractViolation(_))
        ));
        // Exactly 1 is allowed (majority vote emits full-magnitude entries).
        assert!(apply_update(&[0.0], &[1.0], &h).is_ok());
    }

    #[test]
    fn signum_delta_scalar_trace() {
        let s = SignumState::zeros(1, 0.99).unwrap();
        let (delta, s2) = signum_delta(&s, &[2.0]).unwrap();
        assert!(close(s2.m[0], 0.02, tol::SCALAR_TRACE_ABS));
        assert_eq!(delta.as_slice(), &[1]);

        let (dz, _) = signum_delta(&SignumState::zeros(1, 0.99).unwrap(), &[0.0]).unwrap();
        assert_eq!(dz.as_slice(), &[0]);
    }

    #[test]
    fn signum_beta_zero_is_sign_sgd() {
        let s = SignumState::zeros(3, 0.0).unwrap();
        let (delta, s2) = signum_delta(&s, &[3.0, -0.2, 0.0]).unwrap();
        assert_eq!(delta.as_slice(), &[1, -1, 0]);
        assert_eq!(s2.m, vec![3.0, -0.2, 0.0]);
    }

    #[test]
    fn adamw_first_step_is_minus_lr() {
        // At step 1 the bias-corrected ratio m_hat/sqrt(v_hat) is 1 up to eps.
        let h = Hyperparams::new(0.9, 0.99, 0.1, 0.0).unwrap();
        let (out, s2) = adamw_step(
            &AdamWState::zeros(1),
            &[0.0],
            &[1.0],
            &h,
            &AdamParams::default(),
        )
        .unwrap();
        assert!(close(out[0], -0.1, tol::ADAMW_TRACE_ABS), "got {}", out[0]);
        assert_eq!(s2.step, 1);
    }

    #[test]
    fn adamw_zero_grad_is_pure_decay() {
        let h = Hyperparams::new(0.9, 0.99, 0.1, 0.01).unwrap();
        let (out, _) = adamw_step(
            &AdamWState::zeros(2),
            &[1.0, -2.0],
            &[0.0, 0.0],
            &h,
            &AdamParams::default(),
        )
        .unwrap();
        assert!(close(out[0], 1.0 - 0.1 * 0.01, 1e-15));
        assert!(close(out[1], -2.0 + 0.1 * 0.01 * 2.0, 1e-15));
    }

    #[test]
    fn adamw_constant_grad_update_bounded_by_lr() {
        let h = Hyperparams::new(0.9, 0.99, 0.1, 0.0).unwrap();
        let mut state = AdamWState::zeros(1);
        let mut x = vec![0.0];
        for _ in 0..2 {
            let prev = x[0];
            let (nx, ns) = adamw_step(&state, &x, &[1.0], &h, &AdamParams::default()).unwrap();
            x = nx;
            state = ns;
            assert!((x[0] - prev).abs() <= h.lr + 1e-12);
        }
    }

    #[test]
    fn adamw_rejects_bad_eps() {
        assert!(AdamParams::new(0.9, 0.999, 0.0).is_err());
        let h = Hyperparams::default();
        let bad = AdamParams {
            eps: -1.0,
            ..AdamParams::default()
        };
        assert!(matches!(
            adamw_step(&AdamWState::zeros(1), &[0.0], &[1.0], &h, &bad),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn cosine_schedule_shape() {
        assert_eq!(lr_factor(Schedule::Constant, 1, 100), 1.0);
        assert_eq!(lr_factor(Schedule::Cosine, 1, 100), 1.0);
        let mut prev = f64::INFINITY;
        for t in 1..=100 {
            let f = lr_factor(Schedule::Cosine, t, 100);
            assert!(f > 0.0 && f < prev);
            prev = f;
        }
    }

    proptest! {
        #[test]
        fn lion_matches_signum_when_betas_coincide(
            m in proptest::collection::vec(-5.0f64..5.0, 1..24),
            g in proptest::collection::vec(-5.0f64..5.0, 1..24),
            beta in 0.01f64..0.99,
        ) {
            // With beta1 = beta2 = beta the Lion direction is the sign of the
            // refreshed momentum, i.e. exactly the Signum direction. Both
            // paths compute beta*m + (1-beta)*g with identical operations,
            // so the deltas agree bitwise.
            let dim = m.len().min(g.len());
            let m = &m[..dim];
            let g = &g[..dim];
            let h = Hyperparams::new(beta, beta, 1e-4, 0.0).unwrap();
            let lion = LionState { m: m.to_vec() };
            let (ld, lm) = lion_delta(&lion, g, &h).unwrap();
            let signum = SignumState { m: m.to_vec(), beta };
            let (sd, sm) = signum_delta(&signum, g).unwrap();
            prop_assert_eq!(ld, sd);
            prop_assert_eq!(lm.m, sm.m);
        }

        #[test]
        fn lion_delta_invariant_to_joint_positive_rescale(
            m in proptest::collection::vec(-5.0f64..5.0, 1..24),
            g in proptest::collection::vec(-5.0f64..5.0, 1..24),
            c in prop_oneof![Just(2.0f64), Just(0.5), Just(1024.0), Just(7.0)],
        ) {
            let dim = m.len().min(g.len());
            let m = &m[..dim];
            let g = &g[..dim];
            let h = Hyperparams::default();
            let (d1, _) = lion_delta(&LionState { m: m.to_vec() }, g, &h).unwrap();
            let ms: Vec<f64> = m.iter().map(|v| v * c).collect();
            let gs: Vec<f64> = g.iter().map(|v| v * c).collect();
            let (d2, m2) = lion_delta(&LionState { m: ms }, &gs, &h).unwrap();
            prop_assert_eq!(d1, d2);
            // The refreshed momentum scales along with its inputs.
            let (_, m1) = lion_delta(&LionState { m: m.to_vec() }, g, &h).unwrap();
            for (a, b) in m1.m.iter().zip(&m2.m) {
                prop_assert!((a * c - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
