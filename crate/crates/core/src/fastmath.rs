//! Integer-friendly replacements for `round`, `pow(2, k)` and `exp`, plus the
//! tanh/sigmoid activations built on top of them.
//!
//! `fast_exp` is the classic bit-pattern trick: scale `x` so that its integer
//! part lands in the exponent field of an IEEE 754 single and its fractional
//! part spills linearly into the mantissa. The linear mantissa makes the result
//! piecewise-linear in `2^x`, with a worst-case relative error of about 6.2%
//! when no correction constant is applied.

use crate::error::{Error, Result};

/// Lower bound (exclusive) of the `fast_exp` input range.
pub const EXP_INPUT_MIN: f32 = -87.0;
/// Upper bound (exclusive) of the `fast_exp` input range.
pub const EXP_INPUT_MAX: f32 = 88.0;

/// Largest exponent accepted by [`fast_power_of_two`].
pub const MAX_POWER_OF_TWO: u32 = 62;

/// Constants for the bit-pattern exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpApproxConstants {
    /// `2^23 / ln 2`: converts a natural exponent into exponent-field units.
    pub slope: f32,
    /// Bit pattern added after scaling; `127 << 23` is the pattern of `1.0f32`.
    pub offset: i32,
}

impl ExpApproxConstants {
    pub const DEFAULT: Self = Self {
        slope: 12_102_203.0,
        offset: 127 << 23,
    };

    /// Shifts the offset by `correction` units of the mantissa LSB. A negative
    /// correction centers the error around zero at the cost of `exp(0) != 1`.
    pub const fn with_correction(correction: i32) -> Self {
        Self {
            slope: Self::DEFAULT.slope,
            offset: Self::DEFAULT.offset + correction,
        }
    }
}

impl Default for ExpApproxConstants {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Rounds to the nearest integer, ties away from zero.
///
/// The caller must keep `|x| < 2^31 - 1`; outside that range the cast saturates.
#[inline]
pub fn fast_round(x: f32) -> i32 {
    let truncated = x as i32;
    // Exact for |x| < 2^24, and every f32 at or above 2^23 is already integral.
    let frac = x - truncated as f32;
    if frac >= 0.5 {
        truncated.saturating_add(1)
    } else if frac <= -0.5 {
        truncated.saturating_sub(1)
    } else {
        truncated
    }
}

/// `2^k` by left shift.
#[inline]
pub fn fast_power_of_two(k: u32) -> Result<i64> {
    if k > MAX_POWER_OF_TWO {
        return Err(Error::Range(format!(
            "power-of-two exponent {k} exceeds {MAX_POWER_OF_TWO}"
        )));
    }
    Ok(1i64 << k)
}

/// Approximates `e^x` by reinterpreting `round(slope * x) + offset` as an f32.
/// Inputs are clamped into `(-87, 88)` so the bit pattern cannot wrap.
#[inline]
pub fn fast_exp(x: f32) -> f32 {
    fast_exp_with(x, &ExpApproxConstants::DEFAULT)
}

#[inline]
pub fn fast_exp_with(x: f32, constants: &ExpApproxConstants) -> f32 {
    let x = if x.is_nan() {
        0.0
    } else {
        x.clamp(EXP_INPUT_MIN, EXP_INPUT_MAX)
    };
    let bits = fast_round(constants.slope * x).wrapping_add(constants.offset);
    f32::from_bits(bits as u32)
}

/// tanh from `fast_exp`. Evaluated on `|x|` and mirrored so the result is
/// exactly odd.
#[inline]
pub fn tanh_f(x: f32) -> f32 {
    let e = fast_exp(-2.0 * x.abs());
    let t = (1.0 - e) / (1.0 + e);
    t.copysign(x)
}

/// Logistic sigmoid from `fast_exp`. The negative half is `1 - sigmoid(|x|)`,
/// which keeps `sigmoid(x) + sigmoid(-x) == 1`.
#[inline]
pub fn sigmoid_f(x: f32) -> f32 {
    let positive = 1.0 / (1.0 + fast_exp(-x.abs()));
    if x >= 0.0 {
        positive
    } else {
        1.0 - positive
    }
}

#[inline]
pub fn tanh_ref(x: f32) -> f32 {
    x.tanh()
}

#[inline]
pub fn sigmoid_ref(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// tanh'(z) written in terms of the output `y = tanh(z)`.
#[inline]
pub fn tanh_deriv(y: f32) -> f32 {
    1.0 - y * y
}

/// sigmoid'(z) written in terms of the output `y = sigmoid(z)`.
#[inline]
pub fn sigmoid_deriv(y: f32) -> f32 {
    y * (1.0 - y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Round-half-away-from-zero computed in double precision.
    fn round_oracle(x: f32) -> i32 {
        (x as f64).round() as i32
    }

    #[test]
    fn fast_round_examples() {
        assert_eq!(fast_round(0.0), 0);
        assert_eq!(fast_round(2.5), round_oracle(2.5));
        assert_eq!(fast_round(2.5), 3);
        assert_eq!(fast_round(-1.5), -2);
        assert_eq!(fast_round(-0.4), 0);
    }

    #[test]
    fn fast_round_edge_just_below_half() {
        let x = 0.5f32.next_down_compat();
        assert_eq!(fast_round(x), 0);
        assert_eq!(fast_round(-x), 0);
    }

    #[test]
    fn fast_round_dense_grid() {
        // Quarter steps hit every tie in the range.
        let mut x = -1.0e6f32;
        while x <= 1.0e6 {
            assert_eq!(fast_round(x), round_oracle(x), "x = {x}");
            x += 0.25;
        }
        // Fine grid near zero where f32 spacing is smallest.
        for i in -200_000..=200_000 {
            let x = i as f32 * 1.0e-4;
            assert_eq!(fast_round(x), round_oracle(x), "x = {x}");
        }
    }

    #[test]
    fn fast_power_of_two_matches_pow() {
        assert_eq!(fast_power_of_two(0).unwrap(), 1);
        assert_eq!(fast_power_of_two(5).unwrap(), 32);
        assert_eq!(fast_power_of_two(30).unwrap(), 1_073_741_824);
        for k in 0..=62u32 {
            assert_eq!(fast_power_of_two(k).unwrap(), 2i64.pow(k));
        }
        assert!(matches!(fast_power_of_two(63), Err(Error::Range(_))));
    }

    #[test]
    fn offset_is_bit_pattern_of_one() {
        let c = ExpApproxConstants::DEFAULT;
        assert_eq!(f32::from_bits(c.offset as u32), 1.0);
        assert!(c.slope > 0.0);
        let ideal = (1u32 << 23) as f64 / std::f64::consts::LN_2;
        assert!((c.slope as f64 - ideal).abs() < 1.0);
    }

    #[test]
    fn fast_exp_examples() {
        assert_eq!(fast_exp(0.0).to_bits(), 1.0f32.to_bits());
        let e1 = fast_exp(1.0) as f64;
        assert!((e1 - 1f64.exp()).abs() / 1f64.exp() <= 0.07, "{e1}");
        let em2 = fast_exp(-2.0) as f64;
        assert!((em2 - (-2f64).exp()).abs() / (-2f64).exp() <= 0.07, "{em2}");
    }

    #[test]
    fn fast_exp_error_budget_on_grid() {
        let mut worst = 0.0f64;
        for i in -10_000..=10_000 {
            let x = i as f32 * 1.0e-3;
            let reference = (x as f64).exp();
            let rel = (fast_exp(x) as f64 - reference).abs() / reference;
            worst = worst.max(rel);
        }
        assert!(worst <= 0.07, "worst relative error {worst}");
    }

    #[test]
    fn fast_exp_clamps_out_of_range() {
        assert!(fast_exp(1000.0).is_finite());
        assert!(fast_exp(-1000.0) >= 0.0);
        assert_eq!(fast_exp(1000.0), fast_exp(EXP_INPUT_MAX));
    }

    #[test]
    fn activation_examples() {
        assert!(tanh_f(0.0).abs() <= 1e-6);
        assert!((sigmoid_f(0.0) - 0.5).abs() <= 1e-6);
        assert!((tanh_f(1.0) - 0.7616).abs() <= 0.02, "{}", tanh_f(1.0));
        assert_eq!(tanh_deriv(0.0), 1.0);
        assert_eq!(sigmoid_deriv(0.5), 0.25);
        assert!((tanh_deriv(0.7616) - 0.4200).abs() <= 1e-3);
    }

    #[test]
    fn activations_stay_in_range() {
        for i in -2000..=2000 {
            let x = i as f32 * 0.05;
            let t = tanh_f(x);
            let s = sigmoid_f(x);
            assert!((-1.0..=1.0).contains(&t));
            assert!(s >= 0.0 && s <= 1.0);
            assert!((tanh_f(x) + tanh_f(-x)).abs() <= 1e-5);
            assert!((sigmoid_f(x) + sigmoid_f(-x) - 1.0).abs() <= 1e-5);
        }
    }

    trait NextDown {
        fn next_down_compat(self) -> Self;
    }

    impl NextDown for f32 {
        fn next_down_compat(self) -> Self {
            f32::from_bits(self.to_bits() - 1)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100_000))]

        #[test]
        fn fast_round_matches_reference(x in -2.0e9f32..2.0e9f32) {
            prop_assert_eq!(fast_round(x), round_oracle(x));
        }
    }

    proptest! {
        #[test]
        fn fast_round_small_magnitudes(x in -1000.0f32..1000.0f32) {
            prop_assert_eq!(fast_round(x), round_oracle(x));
        }

        #[test]
        fn fast_exp_is_monotone(mut xs in proptest::collection::vec(-100.0f32..100.0, 2..64)) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in xs.windows(2) {
                prop_assert!(fast_exp(pair[0]) <= fast_exp(pair[1]));
            }
        }
    }
}
