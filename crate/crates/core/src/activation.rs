use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fastmath;

/// Which implementation of `exp` the float activations use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivationMath {
    /// Bit-pattern `fast_exp`.
    #[default]
    Fast,
    /// The platform's `exp`/`tanh`.
    Reference,
}

impl FromStr for ActivationMath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(ActivationMath::Fast),
            "reference" => Ok(ActivationMath::Reference),
            other => Err(Error::Config(format!(
                "unknown activation math `{other}` (expected fast or reference)"
            ))),
        }
    }
}

impl fmt::Display for ActivationMath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationMath::Fast => "fast",
            ActivationMath::Reference => "reference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    /// Identifier used in model files.
    pub fn id(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Sigmoid => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation id {other}"))),
        }
    }

    #[inline]
    pub fn apply(self, x: f32, math: ActivationMath) -> f32 {
        match (self, math) {
            (Activation::Tanh, ActivationMath::Fast) => fastmath::tanh_f(x),
            (Activation::Tanh, ActivationMath::Reference) => fastmath::tanh_ref(x),
            (Activation::Sigmoid, ActivationMath::Fast) => fastmath::sigmoid_f(x),
            (Activation::Sigmoid, ActivationMath::Reference) => fastmath::sigmoid_ref(x),
        }
    }

    /// Derivative evaluated from the activation's output.
    #[inline]
    pub fn deriv_from_output(self, y: f32) -> f32 {
        match self {
            Activation::Tanh => fastmath::tanh_deriv(y),
            Activation::Sigmoid => fastmath::sigmoid_deriv(y),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            assert_eq!(Activation::from_id(act.id()).unwrap(), act);
        }
        assert!(matches!(Activation::from_id(7), Err(Error::Config(_))));
    }

    #[test]
    fn math_modes_agree_roughly() {
        for i in -40..=40 {
            let x = i as f32 * 0.1;
            for act in [Activation::Tanh, Activation::Sigmoid] {
                let fast = act.apply(x, ActivationMath::Fast);
                let exact = act.apply(x, ActivationMath::Reference);
                assert!((fast - exact).abs() < 0.03, "{act} at {x}: {fast} vs {exact}");
            }
        }
    }
}
