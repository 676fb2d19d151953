//! Flat f64 vector helpers: finiteness guards, norms, the ternary sign map,
//! and distance to the weight-decay box.
//!
//! Parameter vectors are plain `&[f64]` / `Vec<f64>` throughout the crate;
//! there is no tensor abstraction. Operations that feed wire codecs or
//! optimizer state validate finiteness up front so NaN/Inf can never
//! propagate silently.

use crate::error::{Error, Result};
use crate::wire::SignUpdate;

/// Sign with the sign(0) = 0 convention used by all in-memory math.
/// The 1-bit wire codec maps the 0 case separately (see `wire::pack_binary`).
#[inline]
pub fn sign_scalar(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Coordinatewise ternary sign of a finite vector.
pub fn sign(v: &[f64]) -> Result<SignUpdate> {
    check_finite("sign input", v)?;
    Ok(SignUpdate::from_signs(v.iter().map(|&x| sign_scalar(x)).collect()))
}

pub fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    for (k, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{name}: non-finite entry {x} at coordinate {k}"
            )));
        }
    }
    Ok(())
}

pub fn check_same_len(name: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "{name}: length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    Linf,
}

/// Distance from `x` to the box {z : |z_k| <= 1/lambda} in the chosen norm.
///
/// The box is the feasible set induced by weight decay `lambda`; the distance
/// is the norm of the componentwise projection residual max(|x| - 1/lambda, 0)
/// and is 0 exactly when ||lambda * x||_inf <= 1.
pub fn dist_to_feasible(x: &[f64], lambda: f64, norm: Norm) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dist_to_feasible: lambda must be positive and finite, got {lambda}"
        )));
    }
    check_finite("dist_to_feasible input", x)?;
    let radius = 1.0 / lambda;
    let excess = x.iter().map(|&v| (v.abs() - radius).max(0.0));
    Ok(match norm {
        Norm::L2 => excess.map(|e| e * e).sum::<f64>().sqrt(),
        Norm::Linf => excess.fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_basic_cases() {
        assert_eq!(sign(&[1.5, -0.2, 0.0]).unwrap().as_slice(), &[1, -1, 0]);
        assert_eq!(sign(&[0.0, 0.0]).unwrap().as_slice(), &[0, 0]);
    }

    #[test]
    fn sign_does_not_underflow_tiny_values() {
        // -1e-300 is a perfectly representable normal f64; the comparison
        // against zero is exact, so no magnitude threshold may creep in.
        assert_eq!(sign(&[-1e-300]).unwrap().as_slice(), &[-1]);
        assert_eq!(sign(&[f64::MIN_POSITIVE / 2.0]).unwrap().as_slice(), &[1]);
    }

    #[test]
    fn sign_rejects_non_finite() {
        assert!(matches!(
            sign(&[f64::NAN]),
            Err(Error::InvalidInput(_))
        ));
        assert!(sign(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn dist_one_coordinate_outside() {
        let d = dist_to_feasible(&[2.0, 0.0], 1.0, Norm::L2).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn dist_interior_point_is_zero_in_both_norms() {
        for norm in [Norm::L2, Norm::Linf] {
            assert_eq!(dist_to_feasible(&[0.5, -0.9], 1.0, norm).unwrap(), 0.0);
        }
    }

    #[test]
    fn dist_wider_box_brute_force() {
        // Box is |x_k| <= 2, excess vector is (1, 0).
        let d = dist_to_feasible(&[3.0, -2.0], 0.5, Norm::L2).unwrap();
        let brute = {
            // Project onto the box by clamping, then measure the gap.
            let x = [3.0f64, -2.0];
            let z: Vec<f64> = x.iter().map(|v| v.clamp(-2.0, 2.0)).collect();
            norm_l2(&[x[0] - z[0], x[1] - z[1]])
        };
        assert_eq!(d, brute);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn dist_rejects_nonpositive_lambda() {
        assert!(matches!(
            dist_to_feasible(&[1.0], 0.0, Norm::L2),
            Err(Error::InvalidParameter(_))
        ));
        assert!(dist_to_feasible(&[1.0], -0.5, Norm::Linf).is_err());
    }

    proptest! {
        #[test]
        fn sign_is_scale_invariant(
            v in proptest::collection::vec(-1e6f64..1e6, 0..32),
            c in 1e-6f64..1e6,
        ) {
            let s1 = sign(&v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let s2 = sign(&scaled).unwrap();
            prop_assert_eq!(s1, s2);
        }

        #[test]
        fn dist_zero_iff_inside_box(
            x in proptest::collection::vec(-20.0f64..20.0, 1..16),
            lambda in 0.05f64..2.0,
        ) {
            let inside = norm_linf(&x) * lambda <= 1.0;
            for norm in [Norm::L2, Norm::Linf] {
                let d = dist_to_feasible(&x, lambda, norm).unwrap();
                prop_assert_eq!(d == 0.0, inside);
            }
        }

        #[test]
        fn dist_matches_brute_force_projection(
            x in proptest::collection::vec(-20.0f64..20.0, 1..16),
            lambda in 0.05f64..2.0,
        ) {
            let r = 1.0 / lambda;
            let gap: Vec<f64> = x.iter().map(|v| v - v.clamp(-r, r)).collect();
            let d2 = dist_to_feasible(&x, lambda, Norm::L2).unwrap();
            let dinf = dist_to_feasible(&x, lambda, Norm::Linf).unwrap();
            prop_assert!((d2 - norm_l2(&gap)).abs() <= 1e-12 * (1.0 + d2));
            prop_assert!((dinf - norm_linf(&gap)).abs() <= 1e-12 * (1.0 + dinf));
        }
    }
}
