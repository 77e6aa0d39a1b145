use super::{forward_full, FullModel, QDenseLayer, QuantModel};
use crate::activation::ActivationMath;
use crate::error::{Error, Result};
use crate::quant::{self, build_lut_with, choose_exponent, QuantParams};

/// Exponents used when no calibration data is given, plus the LUT build mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizeOptions {
    /// Network input; `-7` covers features normalized into `[-1, 1]`.
    pub input_exponent: i32,
    /// LUT input. `-4` covers pre-activations in `[-8, 8)`, past which tanh and
    /// sigmoid are flat at 8-bit output resolution, so it is also the
    /// coarsest exponent calibration will pick.
    pub preact_exponent: i32,
    /// LUT output; `-7` maps `[-1, 1]`.
    pub act_exponent: i32,
    pub lut_math: ActivationMath,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        Self {
            input_exponent: -7,
            preact_exponent: -4,
            act_exponent: -7,
            lut_math: ActivationMath::Reference,
        }
    }
}

/// Post-training quantization of a float model.
///
/// Weight exponents come from [`choose_exponent`] per layer. With a
/// calibration set (flat, row-major, `input_dim` values per sample) the input
/// exponent and each layer's pre-activation exponent are fitted to the
/// observed ranges, the latter never coarser than `opts.preact_exponent`.
pub fn quantize_model(
    m: &FullModel,
    opts: &QuantizeOptions,
    calibration: Option<&[f32]>,
) -> Result<QuantModel> {
    let act_params = QuantParams::new(opts.act_exponent)?;
    let default_preact = QuantParams::new(opts.preact_exponent)?;
    let (input_params, preact_params) = match calibration {
        None => (
            QuantParams::new(opts.input_exponent)?,
            vec![default_preact; m.layers().len()],
        ),
        Some(samples) => calibrate(m, samples, default_preact)?,
    };

    let mut layers = Vec::with_capacity(m.layers().len());
    let mut in_params = input_params;
    for (layer, &preact) in m.layers().iter().zip(&preact_params) {
        let w_params = choose_exponent(layer.weights())?;
        let weights = quant::quantize_shaped(
            layer.weights(),
            vec![layer.out_dim(), layer.in_dim()],
            w_params,
        )?;
        let bias_exponent = in_params.exponent() + w_params.exponent();
        let biases = layer
            .biases()
            .iter()
            .map(|&b| quantize_bias(b, bias_exponent))
            .collect();
        let lut = build_lut_with(layer.activation(), preact, act_params, opts.lut_math);
        layers.push(QDenseLayer::new(weights, biases, in_params, lut)?);
        in_params = act_params;
    }
    let mut q = QuantModel::new(layers)?;
    q.set_pretrained(m.is_pretrained());
    Ok(q)
}

/// Rounds a real bias onto the accumulator grid `2^exponent` (half away from
/// zero), saturating at the i32 range.
pub(crate) fn quantize_bias(b: f32, exponent: i32) -> i32 {
    // f64 keeps every i32 exactly; `as` saturates.
    (b as f64 * 2f64.powi(-exponent)).round() as i32
}

fn calibrate(
    m: &FullModel,
    samples: &[f32],
    default_preact: QuantParams,
) -> Result<(QuantParams, Vec<QuantParams>)> {
    let d = m.input_dim();
    if samples.is_empty() || samples.len() % d != 0 {
        return Err(Error::Config(format!(
            "calibration set of {} values is not a whole number of {d}-feature samples",
            samples.len()
        )));
    }
    let input_params = choose_exponent(samples)?;
    let n_layers = m.layers().len();
    let mut lo = vec![0.0f32; n_layers];
    let mut hi = vec![0.0f32; n_layers];
    for x in samples.chunks_exact(d) {
        let trace = forward_full(m, x, ActivationMath::Reference)?;
        for (l, z) in trace.preacts.iter().enumerate() {
            for &v in z {
                lo[l] = lo[l].min(v);
                hi[l] = hi[l].max(v);
            }
        }
    }
    let preacts = lo
        .iter()
        .zip(&hi)
        .map(|(&lo, &hi)| {
            let fitted = choose_exponent(&[lo, hi])?;
            if fitted.exponent() > default_preact.exponent() {
                Ok(default_preact)
            } else {
                Ok(fitted)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((input_params, preacts))
}
