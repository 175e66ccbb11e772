//! Scalar divergences between Bernoulli distributions and the inversion
//! helpers every bound evaluator composes. All logarithms are natural, so
//! every divergence is in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for [`kl_bernoulli_inv_upper`].
pub const DEFAULT_INV_TOL: f64 = 1e-10;
const MAX_BISECTION_ITERS: usize = 200;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Prob(f64);

impl Prob {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Prob(value))
        } else {
            Err(Error::domain(format!("probability {value} outside [0, 1]")))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            Prob(0.0)
        } else {
            Prob(value.clamp(0.0, 1.0))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Prob {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Prob::new(v)
    }
}

impl From<Prob> for f64 {
    fn from(p: Prob) -> f64 {
        p.0
    }
}

/// A divergence value that may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kl {
    Finite(f64),
    Infinite,
}

impl Kl {
    /// The value as a float, with `Infinite` mapped to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            Kl::Finite(v) => v,
            Kl::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Kl::Finite(_))
    }
}

/// `kl(p‖q) = p ln(p/q) + (1-p) ln((1-p)/(1-q))` with `0·ln(0/x) = 0`.
pub fn kl_bernoulli(p: Prob, q: Prob) -> Kl {
    let (p, q) = (p.0, q.0);
    let a = if p == 0.0 {
        0.0
    } else if q == 0.0 {
        return Kl::Infinite;
    } else {
        p * (p / q).ln()
    };
    let b = if p == 1.0 {
        0.0
    } else if q == 1.0 {
        return Kl::Infinite;
    } else {
        (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    };
    // Rounding can leave a tiny negative value when p ≈ q.
    Kl::Finite((a + b).max(0.0))
}

/// Largest `q ∈ [p, 1]` with `kl(p‖q) ≤ budget`, by bisection (at most 200
/// halvings). Stops once the bracket is narrower than `tol` and the
/// divergence at the returned point is within `tol` of the budget.
///
/// A result below 1 always satisfies `kl(p‖q) ≤ budget`. Once the budget
/// covers the divergence at the largest float below 1 the result saturates
/// at exactly 1.
pub fn kl_bernoulli_inv_upper(p: Prob, budget: f64, tol: f64) -> Prob {
    if budget <= 0.0 || p.0 == 1.0 {
        return p;
    }
    let top = 1.0 - f64::EPSILON / 2.0;
    if p.0 >= top || kl_bernoulli(p, Prob(top)).value() <= budget {
        return Prob(1.0);
    }
    let (mut lo, mut hi) = (p.0, top);
    for _ in 0..MAX_BISECTION_ITERS {
        if hi - lo <= tol && budget - kl_bernoulli(p, Prob(lo)).value() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if kl_bernoulli(p, Prob(mid)).value() <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Prob(lo)
}

/// `D_γ(a‖b) = γa − ln(1 − b + b e^γ)`. Identically zero at `γ = 0`.
pub fn d_gamma(a: Prob, b: Prob, gamma: f64) -> f64 {
    gamma * a.0 - (b.0 * gamma.exp_m1()).ln_1p()
}

/// Upper bound on `b` certified by `D_{-1/λ}(a‖b) < c`:
/// `b ≤ (a + λc) / (1 − 1/(2λ))`, valid for `λ > 1/2`.
pub fn d_gamma_invert(a: f64, c: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.5) {
        return Err(Error::domain(format!(
            "D_gamma inversion needs lambda > 0.5, got {lambda}"
        )));
    }
    Ok((a + lambda * c) / (1.0 - 0.5 / lambda))
}

/// Gap bound implied by `n(a−b)² + m(b−c)² ≤ budget`:
/// `|a − c| ≤ sqrt(((n+m)/(nm))·budget)`.
pub fn combine_squares(n: u64, m: u64, budget: f64) -> f64 {
    combine_weighted_squares(n as f64, m as f64, budget)
}

/// [`combine_squares`] with real positive weights.
pub fn combine_weighted_squares(wa: f64, wb: f64, budget: f64) -> f64 {
    ((wa + wb) / (wa * wb) * budget.max(0.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pr(v: f64) -> Prob {
        Prob::new(v).unwrap()
    }

    // Reference values below were computed with mpmath at 40 digits.

    #[test]
    fn kl_examples() {
        assert_eq!(kl_bernoulli(pr(0.3), pr(0.3)), Kl::Finite(0.0));
        assert_abs_diff_eq!(
            kl_bernoulli(pr(0.1), pr(0.5)).value(),
            0.368_064_207_168_497_07,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            kl_bernoulli(pr(0.0), pr(0.5)).value(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kl_boundaries() {
        assert_eq!(kl_bernoulli(pr(0.2), pr(0.0)), Kl::Infinite);
        assert_eq!(kl_bernoulli(pr(0.2), pr(1.0)), Kl::Infinite);
        assert_eq!(kl_bernoulli(pr(0.0), pr(0.0)), Kl::Finite(0.0));
        assert_eq!(kl_bernoulli(pr(1.0), pr(1.0)), Kl::Finite(0.0));
        assert_abs_diff_eq!(
            kl_bernoulli(pr(1.0), pr(0.5)).value(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn prob_rejects_out_of_range() {
        assert!(Prob::new(-0.1).is_err());
        assert!(Prob::new(1.5).is_err());
        assert!(Prob::new(f64::NAN).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(kl_bernoulli_inv_upper(pr(0.2), 0.0, 1e-12).get(), 0.2);
        assert_abs_diff_eq!(
            kl_bernoulli_inv_upper(pr(0.0), std::f64::consts::LN_2, 1e-10).get(),
            0.5,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            kl_bernoulli_inv_upper(pr(0.1), 0.368_064_207_168_497_07, 1e-10).get(),
            0.5,
            epsilon = 1e-9
        );
    }

    #[test]
    fn inverse_saturates() {
        assert_eq!(kl_bernoulli_inv_upper(pr(0.2), 1e6, 1e-10).get(), 1.0);
        assert_eq!(kl_bernoulli_inv_upper(pr(1.0), 3.0, 1e-10).get(), 1.0);
    }

    #[test]
    fn d_gamma_examples() {
        for &(a, b) in &[(0.0, 0.0), (0.3, 0.7), (1.0, 0.2)] {
            assert_eq!(d_gamma(pr(a), pr(b), 0.0), 0.0);
        }
        assert_abs_diff_eq!(
            d_gamma(pr(0.3), pr(0.5), 1.0),
            -0.320_114_506_958_277_52,
            epsilon = 1e-14
        );
        for &g in &[-1.7, -0.2, 0.4, 3.0] {
            assert_abs_diff_eq!(d_gamma(pr(1.0), pr(1.0), g), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn d_gamma_invert_examples() {
        assert_abs_diff_eq!(d_gamma_invert(0.2, 0.1, 1.0).unwrap(), 0.6, epsilon = 1e-15);
        assert_eq!(d_gamma_invert(0.0, 0.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(d_gamma_invert(0.5, 0.2, 2.0).unwrap(), 1.2, epsilon = 1e-15);
        assert!(d_gamma_invert(0.1, 0.1, 0.5).is_err());
        assert!(d_gamma_invert(0.1, 0.1, f64::NAN).is_err());
    }

    #[test]
    fn combine_squares_examples() {
        assert_abs_diff_eq!(combine_squares(4, 4, 2.0), 1.0, epsilon = 1e-15);
        assert_eq!(combine_squares(7, 3, 0.0), 0.0);
        assert_abs_diff_eq!(combine_squares(1, 2, 3.0), 4.5_f64.sqrt(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn pinsker(p in 0.0..1.0f64, q in 1e-9..(1.0 - 1e-9)) {
            let kl = kl_bernoulli(pr(p), pr(q)).value();
            prop_assert!(kl + 1e-12 >= 2.0 * (p - q).powi(2));
        }

        #[test]
        fn inverse_round_trip(p in 0.0..0.99f64, c in 0.0..3.0f64) {
            let tol = 1e-10;
            let q = kl_bernoulli_inv_upper(pr(p), c, tol).get();
            prop_assert!(q >= p);
            if q < 1.0 {
                let k = kl_bernoulli(pr(p), pr(q)).value();
                prop_assert!(k <= c + 1e-12);
                // Near q = 1 adjacent floats can be further apart in kl than the tolerance.
                let next = f64::from_bits(q.to_bits() + 1);
                let resolved = kl_bernoulli(pr(p), pr(next)).value() > c;
                prop_assert!(k >= c - 10.0 * tol || resolved, "kl {} budget {}", k, c);
            }
        }

        #[test]
        fn lemma2_inversion_sound(a in 0.0..1.0f64, b in 0.0..1.0f64, lambda in 0.51..20.0f64) {
            let c = d_gamma(pr(a), pr(b), -1.0 / lambda) + 1e-9;
            prop_assert!(b <= d_gamma_invert(a, c, lambda).unwrap() + 1e-12);
        }

        #[test]
        fn d_gamma_convex_in_each_argument(
            a1 in 0.0..1.0f64, a2 in 0.0..1.0f64, b1 in 0.0..1.0f64, b2 in 0.0..1.0f64,
            g in -3.0..3.0f64,
        ) {
            let mid_a = d_gamma(pr(0.5 * (a1 + a2)), pr(b1), g);
            prop_assert!(mid_a <= 0.5 * (d_gamma(pr(a1), pr(b1), g) + d_gamma(pr(a2), pr(b1), g)) + 1e-12);
            let mid_b = d_gamma(pr(a1), pr(0.5 * (b1 + b2)), g);
            prop_assert!(mid_b <= 0.5 * (d_gamma(pr(a1), pr(b1), g) + d_gamma(pr(a1), pr(b2), g)) + 1e-12);
        }
    }
}
