//! Per-sample SGD with node deltas, for float models and for int8 models
//! fine-tuned through a float backward pass.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationMath;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::quantize::quantize_bias;
use crate::nn::{forward_full, forward_int8, ForwardTrace, FullModel, Model, QuantModel, QuantTrace};
use crate::quant::{self, dequantize, quantize_value, QuantParams};

pub const DEFAULT_LEARNING_RATE: f32 = 0.01;
/// Larger than the float default so typical updates clear half a weight step.
pub const DEFAULT_FINETUNE_LEARNING_RATE: f32 = 0.05;

pub const SATURATION_WARNING: &str = "fine-tuning a quantized model that was not initialized \
from pretrained weights: with fixed 8-bit ranges, early errors saturate and training is \
unlikely to converge; quantize a trained float model instead";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    /// Reshuffle the training split every epoch. Off by default: samples are
    /// visited in stored order.
    pub shuffle: bool,
    pub seed: u64,
    pub loss: Loss,
    pub activation_math: ActivationMath,
    /// Carry the part of each weight update lost to requantization into the
    /// next step. Costs one f32 per weight; only used by fine-tuning.
    pub error_feedback: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs,
            shuffle: false,
            seed: 0,
            loss: Loss::Mse,
            activation_math: ActivationMath::default(),
            error_feedback: false,
        }
    }

    pub fn finetune(epochs: usize) -> Self {
        Self {
            learning_rate: DEFAULT_FINETUNE_LEARNING_RATE,
            ..Self::new(epochs)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: f64,
}

/// Counters from one backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BackwardStats {
    /// Number of node deltas computed; equals the model's neuron count.
    pub delta_evaluations: usize,
    /// Largest number of parameters held dequantized at once (hybrid only).
    pub peak_transient_params: usize,
}

/// Mean of squared differences.
pub fn mse_loss(output: &[f32], target: &[f32]) -> Result<f32> {
    check_target(output.len(), target.len())?;
    let sum: f32 = output
        .iter()
        .zip(target)
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    Ok(sum / output.len() as f32)
}

fn check_target(outputs: usize, targets: usize) -> Result<()> {
    if outputs != targets || outputs == 0 {
        return Err(Error::Invariant(format!(
            "output has {outputs} values, target has {targets}"
        )));
    }
    Ok(())
}

/// Predicted class: a single output is thresholded at 0.5 (0.5 itself counts
/// as positive); wider outputs take the argmax, lowest index on ties.
pub fn classify(output: &[f32]) -> usize {
    if output.len() == 1 {
        return usize::from(output[0] >= 0.5);
    }
    let mut best = 0;
    for (k, &v) in output.iter().enumerate().skip(1) {
        if v > output[best] {
            best = k;
        }
    }
    best
}

/// One delta per neuron for the sample in `trace`, output layer last.
///
/// The deltas are the gradient of `0.5 * sum((a - t)^2)` with respect to each
/// neuron's pre-activation; weight and bias gradients follow as `delta * a_in`
/// and `delta`.
pub fn node_deltas(trace: &ForwardTrace, target: &[f32], m: &FullModel) -> Result<Vec<Vec<f32>>> {
    let layers = m.layers();
    let n = layers.len();
    if trace.activations.len() != n {
        return Err(Error::Invariant("trace does not belong to this model".into()));
    }
    check_target(trace.output().len(), target.len())?;
    let mut deltas = vec![Vec::new(); n];
    let last = &layers[n - 1];
    deltas[n - 1] = trace
        .output()
        .iter()
        .zip(target)
        .map(|(&a, &t)| (a - t) * last.activation().deriv_from_output(a))
        .collect();
    for l in (0..n - 1).rev() {
        let above = &layers[l + 1];
        let act = layers[l].activation();
        let d_above = &deltas[l + 1];
        let mut d = vec![0.0f32; layers[l].out_dim()];
        for (k, &dk) in d_above.iter().enumerate() {
            for (di, &w) in d.iter_mut().zip(above.row(k)) {
                *di += w * dk;
            }
        }
        for (di, &a) in d.iter_mut().zip(&trace.activations[l]) {
            *di *= act.deriv_from_output(a);
        }
        deltas[l] = d;
    }
    Ok(deltas)
}

/// L-SGD step on a float model: node deltas, then `w -= lr * delta * a_in`
/// and `b -= lr * delta` for every layer.
pub fn backward_lsgd(
    trace: &ForwardTrace,
    target: &[f32],
    m: &mut FullModel,
    lr: f32,
) -> Result<BackwardStats> {
    let deltas = node_deltas(trace, target, m)?;
    let delta_evaluations = deltas.iter().map(Vec::len).sum();
    for (l, (layer, d)) in m.layers_mut().iter_mut().zip(&deltas).enumerate() {
        let a_in = trace.layer_input(l);
        let in_dim = layer.in_dim();
        let weights = layer.weights_mut();
        for (j, &dj) in d.iter().enumerate() {
            let step = lr * dj;
            for (w, &a) in weights[j * in_dim..(j + 1) * in_dim].iter_mut().zip(a_in) {
                *w -= step * a;
            }
        }
        for (b, &dj) in layer.biases_mut().iter_mut().zip(d) {
            *b -= lr * dj;
        }
    }
    Ok(BackwardStats {
        delta_evaluations,
        peak_transient_params: 0,
    })
}

/// Sub-step weight updates carried between hybrid steps, one buffer per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    layers: Vec<Vec<f32>>,
}

impl Residuals {
    pub fn new(m: &QuantModel) -> Self {
        Self {
            layers: m.layers().iter().map(|l| vec![0.0; l.weights().len()]).collect(),
        }
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        &self.layers[l]
    }
}

/// L-SGD step on an int8 model whose forward pass produced `qtrace`.
///
/// The output is dequantized for the loss and output delta. Layers are then
/// visited last to first, one at a time: its weights and biases are
/// dequantized, the error for the layer below is formed from the pre-update
/// weights, the update is applied in float and the result is written straight
/// back into the layer's existing exponents. LUTs and exponents never change.
/// Weight updates smaller than half a step are lost unless `residuals` carries
/// them forward.
pub fn backward_hybrid(
    qtrace: &QuantTrace,
    target: &[f32],
    m: &mut QuantModel,
    lr: f32,
    mut residuals: Option<&mut Residuals>,
) -> Result<BackwardStats> {
    let n = m.layers().len();
    if qtrace.activations.len() != n {
        return Err(Error::Invariant("trace does not belong to this model".into()));
    }
    let output = dequantize(qtrace.output());
    check_target(output.len(), target.len())?;
    let mut stats = BackwardStats::default();

    let out_act = m.layers()[n - 1].activation();
    let mut delta: Vec<f32> = output
        .iter()
        .zip(target)
        .map(|(&a, &t)| (a - t) * out_act.deriv_from_output(a))
        .collect();
    stats.delta_evaluations += delta.len();

    for l in (0..n).rev() {
        let layer = &mut m.layers_mut()[l];
        let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
        let w_params = layer.weight_params();
        let bias_exponent = layer.bias_exponent();
        let bias_step = quant::pow2(bias_exponent) as f64;

        let mut w = dequantize(layer.weights());
        let mut b: Vec<f32> = layer
            .biases()
            .iter()
            .map(|&c| (c as f64 * bias_step) as f32)
            .collect();
        stats.peak_transient_params = stats.peak_transient_params.max(w.len() + b.len());

        let error_below = (l > 0).then(|| {
            let mut e = vec![0.0f32; in_dim];
            for (j, &dj) in delta.iter().enumerate() {
                for (ei, &wji) in e.iter_mut().zip(&w[j * in_dim..(j + 1) * in_dim]) {
                    *ei += wji * dj;
                }
            }
            e
        });

        let a_in = dequantize(qtrace.layer_input(l));
        for j in 0..out_dim {
            let step = lr * delta[j];
            for (wi, &a) in w[j * in_dim..(j + 1) * in_dim].iter_mut().zip(&a_in) {
                *wi -= step * a;
            }
            b[j] -= step;
        }

        let residual = residuals.as_deref_mut().map(|r| &mut r.layers[l]);
        requantize_weights(&w, w_params, layer.weights_mut().codes_mut(), residual);
        for (code, &v) in layer.biases_mut().iter_mut().zip(&b) {
            *code = quantize_bias(v, bias_exponent);
        }
        drop((w, b));

        if let Some(e) = error_below {
            let below = qtrace.layer_input(l);
            let act = m.layers()[l - 1].activation();
            delta = e
                .iter()
                .zip(dequantize(below))
                .map(|(&ei, a)| ei * act.deriv_from_output(a))
                .collect();
            stats.delta_evaluations += delta.len();
        }
    }
    Ok(stats)
}

fn requantize_weights(
    w: &[f32],
    params: QuantParams,
    codes: &mut [i8],
    residual: Option<&mut Vec<f32>>,
) {
    match residual {
        None => {
            for (c, &v) in codes.iter_mut().zip(w) {
                *c = quantize_value(v, params);
            }
        }
        Some(r) => {
            let step = params.step();
            for ((c, &v), ri) in codes.iter_mut().zip(w).zip(r.iter_mut()) {
                let wanted = v + *ri;
                *c = quantize_value(wanted, params);
                // Clamped so a saturated weight cannot wind up an unbounded residual.
                *ri = (wanted - *c as f32 * step).clamp(-step, step);
            }
        }
    }
}

/// Fraction of `ds` classified correctly by `predict`.
pub fn accuracy<F>(ds: &Dataset, mut predict: F) -> Result<f64>
where
    F: FnMut(&[f32]) -> Result<Vec<f32>>,
{
    if ds.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let mut correct = 0usize;
    for (i, (x, _)) in ds.rows().enumerate() {
        if classify(&predict(x)?) == ds.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn check_splits(input_dim: usize, output_dim: usize, train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    for ds in [train, val] {
        if ds.n_features() != input_dim || ds.n_outputs() != output_dim {
            return Err(Error::Config(format!(
                "model maps {input_dim} -> {output_dim} but the data has {} features and {} targets",
                ds.n_features(),
                ds.n_outputs()
            )));
        }
    }
    Ok(())
}

fn epoch_order(n: usize, epoch: usize, cfg: &TrainConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
    }
    order
}

/// Float training. See [`train_full_with`].
pub fn train_full(
    m: &mut FullModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    train_full_with(m, train, val, cfg, &mut |_| {})
}

/// Float training with a per-epoch callback. Each epoch runs forward and
/// [`backward_lsgd`] on every training sample, then measures accuracy on both
/// splits with the updated model.
pub fn train_full_with(
    m: &mut FullModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    check_splits(m.input_dim(), m.output_dim(), train, val)?;
    let math = cfg.activation_math;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0f64;
        for i in epoch_order(train.len(), epoch, cfg) {
            let trace = forward_full(m, train.feature_row(i), math)?;
            loss_sum += mse_loss(trace.output(), train.target_row(i))? as f64;
            backward_lsgd(&trace, train.target_row(i), m, cfg.learning_rate)?;
        }
        let record = EpochRecord {
            epoch,
            train_acc: accuracy(train, |x| m.predict(x, math))?,
            val_acc: accuracy(val, |x| m.predict(x, math))?,
            train_loss: loss_sum / train.len() as f64,
        };
        on_epoch(&record);
        records.push(record);
    }
    m.set_pretrained(true);
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub records: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

/// Hybrid fine-tuning. See [`finetune_quantized_with`].
pub fn finetune_quantized(
    m: &mut QuantModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    finetune_quantized_with(m, train, val, cfg, &mut |_| {})
}

/// Int8 forward plus [`backward_hybrid`] per training sample.
///
/// A model that was not quantized from trained weights still trains, but
/// [`SATURATION_WARNING`] is logged and returned.
pub fn finetune_quantized_with(
    m: &mut QuantModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    check_splits(m.input_dim(), m.output_dim(), train, val)?;
    let mut warnings = Vec::new();
    if !m.is_pretrained() {
        log::warn!("{SATURATION_WARNING}");
        warnings.push(SATURATION_WARNING.to_string());
    }
    let mut residuals = cfg.error_feedback.then(|| Residuals::new(m));
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0f64;
        for i in epoch_order(train.len(), epoch, cfg) {
            let x = m.quantize_input(train.feature_row(i))?;
            let trace = forward_int8(m, &x)?;
            let output = dequantize(trace.output());
            loss_sum += mse_loss(&output, train.target_row(i))? as f64;
            backward_hybrid(&trace, train.target_row(i), m, cfg.learning_rate, residuals.as_mut())?;
        }
        let record = EpochRecord {
            epoch,
            train_acc: accuracy(train, |x| m.predict(x))?,
            val_acc: accuracy(val, |x| m.predict(x))?,
            train_loss: loss_sum / train.len() as f64,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(FinetuneOutcome { records, warnings })
}

/// Fine-tunes a model that must be in quantized form.
pub fn finetune(
    m: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FinetuneOutcome> {
    match m {
        Model::Quantized(q) => finetune_quantized_with(q, train, val, cfg, on_epoch),
        Model::Full(_) => Err(Error::Config(
            "fine-tuning needs a quantized model; run `quantize` first".into(),
        )),
    }
}

/// Writes `epoch,train_acc,val_acc,train_loss` with one row per record.
pub fn write_curve_csv<W: Write>(records: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: Read>(input: R) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["epoch", "train_acc", "val_acc", "train_loss"] {
        return Err(Error::format_at_row(1, "expected header epoch,train_acc,val_acc,train_loss"));
    }
    let mut records = Vec::new();
    for r in reader.deserialize() {
        let r: EpochRecord = r.map_err(csv_error)?;
        if !(0.0..=1.0).contains(&r.train_acc) || !(0.0..=1.0).contains(&r.val_acc) {
            return Err(Error::InvalidData(format!(
                "epoch {}: accuracy outside [0, 1]",
                r.epoch
            )));
        }
        records.push(r);
    }
    Ok(records)
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format_at_row(row, format!("{other:?}")),
    }
}
