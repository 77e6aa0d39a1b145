//! Symmetric signed 8-bit quantization with power-of-two scales.
//!
//! A stored code `q` with exponent `e` represents `q * 2^e`. There is no zero
//! point, so rescaling between tensors is a pure shift.

use crate::activation::{Activation, ActivationMath};
use crate::error::{Error, Result};
use crate::fastmath::fast_round;

pub const CODE_MIN: i32 = i8::MIN as i32;
pub const CODE_MAX: i32 = i8::MAX as i32;

pub const EXPONENT_MIN: i8 = -24;
pub const EXPONENT_MAX: i8 = 8;

/// Exponent used for an all-zero tensor and for values in `[-1, 1]`.
pub const DEFAULT_EXPONENT: i8 = -7;

pub const LUT_SIZE: usize = 256;

/// Per-tensor scale descriptor: real value = code * 2^exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantParams {
    exponent: i8,
}

impl QuantParams {
    pub fn new(exponent: i32) -> Result<Self> {
        if !(EXPONENT_MIN as i32..=EXPONENT_MAX as i32).contains(&exponent) {
            return Err(Error::Range(format!(
                "quantization exponent {exponent} outside [{EXPONENT_MIN}, {EXPONENT_MAX}]"
            )));
        }
        Ok(Self {
            exponent: exponent as i8,
        })
    }

    #[inline]
    pub fn exponent(self) -> i32 {
        self.exponent as i32
    }

    /// Quantization step `2^e`.
    #[inline]
    pub fn step(self) -> f32 {
        pow2(self.exponent())
    }

    /// Largest representable magnitude on the positive side.
    pub fn max_value(self) -> f32 {
        CODE_MAX as f32 * self.step()
    }
}

impl Default for QuantParams {
    fn default() -> Self {
        Self {
            exponent: DEFAULT_EXPONENT,
        }
    }
}

/// Exact `2^e` for the exponents this crate uses.
#[inline]
pub(crate) fn pow2(e: i32) -> f32 {
    f32::from_bits(((127 + e) as u32) << 23)
}

/// Quantizes a single value, saturating to `[-128, 127]`.
#[inline]
pub fn quantize_value(v: f32, params: QuantParams) -> i8 {
    let scaled = (v * pow2(-params.exponent())).clamp(CODE_MIN as f32 - 1.0, CODE_MAX as f32 + 1.0);
    fast_round(scaled).clamp(CODE_MIN, CODE_MAX) as i8
}

#[inline]
pub fn dequantize_value(q: i8, params: QuantParams) -> f32 {
    q as f32 * params.step()
}

/// Signed 8-bit codes with their shape and scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    codes: Vec<i8>,
    shape: Vec<usize>,
    params: QuantParams,
}

impl QTensor {
    pub fn new(codes: Vec<i8>, shape: Vec<usize>, params: QuantParams) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if codes.len() != expected {
            return Err(Error::Invariant(format!(
                "{} codes do not fill shape {shape:?}",
                codes.len()
            )));
        }
        Ok(Self {
            codes,
            shape,
            params,
        })
    }

    pub fn vector(codes: Vec<i8>, params: QuantParams) -> Self {
        let n = codes.len();
        Self {
            codes,
            shape: vec![n],
            params,
        }
    }

    pub fn zeros(shape: Vec<usize>, params: QuantParams) -> Self {
        let n = shape.iter().product();
        Self {
            codes: vec![0; n],
            shape,
            params,
        }
    }

    #[inline]
    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    #[inline]
    pub fn codes_mut(&mut self) -> &mut [i8] {
        &mut self.codes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "non-finite value {} at index {i}",
            values[i]
        )));
    }
    Ok(())
}

/// Picks the finest exponent at which no value saturates.
///
/// The negative side may use code -128, so `[-1.0, 0.99]` fits at `e = -7`
/// while `[1.0]` needs `e = -6`. All-zero input yields `e = -7`; values too
/// large even for `e = 8` get `e = 8` and saturate.
pub fn choose_exponent(values: &[f32]) -> Result<QuantParams> {
    if values.is_empty() {
        return Err(Error::InvalidData("cannot choose an exponent for an empty buffer".into()));
    }
    check_finite(values)?;
    let max_pos = values.iter().copied().fold(0.0f32, f32::max);
    let min_neg = values.iter().copied().fold(0.0f32, f32::min);
    if max_pos == 0.0 && min_neg == 0.0 {
        return Ok(QuantParams::default());
    }
    let fits = |e: i32| {
        let inv = pow2(-e);
        fast_round(max_pos * inv) <= CODE_MAX && fast_round(min_neg * inv) >= CODE_MIN
    };
    let e = (EXPONENT_MIN as i32..=EXPONENT_MAX as i32)
        .find(|&e| fits(e))
        .unwrap_or(EXPONENT_MAX as i32);
    QuantParams::new(e)
}

/// `q_i = clamp(round(v_i / 2^e), -128, 127)` as a 1-D tensor.
pub fn quantize(values: &[f32], params: QuantParams) -> Result<QTensor> {
    check_finite(values)?;
    Ok(QTensor::vector(
        values.iter().map(|&v| quantize_value(v, params)).collect(),
        params,
    ))
}

pub fn quantize_shaped(values: &[f32], shape: Vec<usize>, params: QuantParams) -> Result<QTensor> {
    let flat = quantize(values, params)?;
    QTensor::new(flat.codes, shape, params)
}

pub fn dequantize(t: &QTensor) -> Vec<f32> {
    t.codes
        .iter()
        .map(|&q| dequantize_value(q, t.params))
        .collect()
}

/// Rescales a 32-bit accumulator by `2^shift` and saturates to an int8 code.
///
/// Right shifts round half away from zero. Left shifts saturate.
#[inline]
pub fn requantize_shift(acc: i32, shift: i32) -> i8 {
    debug_assert!((-31..=31).contains(&shift), "shift {shift} out of range");
    let acc = acc as i64;
    let scaled = if shift < 0 {
        let s = -shift;
        let half = 1i64 << (s - 1);
        if acc >= 0 {
            (acc + half) >> s
        } else {
            -((-acc + half) >> s)
        }
    } else {
        // |acc| < 2^31, so anything shifted by more than 8 is far outside the
        // code range already; cap the shift to keep the product in i64.
        acc << shift.min(32)
    };
    scaled.clamp(CODE_MIN as i64, CODE_MAX as i64) as i8
}

/// 256-entry table mapping every input code to its activated output code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationLut {
    table: [i8; LUT_SIZE],
    activation: Activation,
    in_params: QuantParams,
    out_params: QuantParams,
}

impl ActivationLut {
    /// Wraps a table read back from storage.
    pub fn from_table(
        table: [i8; LUT_SIZE],
        activation: Activation,
        in_params: QuantParams,
        out_params: QuantParams,
    ) -> Self {
        Self {
            table,
            activation,
            in_params,
            out_params,
        }
    }

    pub fn table(&self) -> &[i8; LUT_SIZE] {
        &self.table
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_params(&self) -> QuantParams {
        self.in_params
    }

    pub fn out_params(&self) -> QuantParams {
        self.out_params
    }

    #[inline]
    pub fn lookup(&self, code: i8) -> i8 {
        self.table[(code as i32 - CODE_MIN) as usize]
    }
}

/// Builds a LUT from the exact activation.
pub fn build_lut(act: Activation, in_params: QuantParams, out_params: QuantParams) -> ActivationLut {
    build_lut_with(act, in_params, out_params, ActivationMath::Reference)
}

/// Builds a LUT with a chosen activation implementation. `Fast` is only useful
/// for studying how the approximation error interacts with quantization.
pub fn build_lut_with(
    act: Activation,
    in_params: QuantParams,
    out_params: QuantParams,
    math: ActivationMath,
) -> ActivationLut {
    let mut table = [0i8; LUT_SIZE];
    for (slot, code) in table.iter_mut().zip(CODE_MIN..=CODE_MAX) {
        let x = dequantize_value(code as i8, in_params);
        *slot = quantize_value(act.apply(x, math), out_params);
    }
    ActivationLut {
        table,
        activation: act,
        in_params,
        out_params,
    }
}

pub fn apply_lut(t: &QTensor, lut: &ActivationLut) -> Result<QTensor> {
    if t.params != lut.in_params {
        return Err(Error::Invariant(format!(
            "tensor exponent {} does not match LUT input exponent {}",
            t.params.exponent(),
            lut.in_params.exponent()
        )));
    }
    Ok(QTensor {
        codes: t.codes.iter().map(|&c| lut.lookup(c)).collect(),
        shape: t.shape.clone(),
        params: lut.out_params,
    })
}
