//! Dense networks in full precision and int8.
//!
//! Weight matrices are stored `[out_dim x in_dim]` row-major, so each output
//! neuron's weights are contiguous and the dot product is a single loop.

mod builder;
mod io;
mod kernel;
pub(crate) mod quantize;

pub use builder::{build_model, Architecture, LayerSpec, ModelSpec};
pub use io::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION, MAGIC};
pub use kernel::linear_int8;
pub use quantize::{quantize_model, QuantizeOptions};

use crate::activation::{Activation, ActivationMath};
use crate::error::{Error, Result};
use crate::quant::{self, apply_lut, ActivationLut, QTensor, QuantParams};

/// Largest layer width the model file can describe.
pub const MAX_DIM: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f32>,
    biases: Vec<f32>,
    activation: Activation,
}

fn check_dims(in_dim: usize, out_dim: usize) -> Result<()> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::Config(format!(
            "layer dimensions must be positive, got {in_dim}x{out_dim}"
        )));
    }
    if in_dim > MAX_DIM || out_dim > MAX_DIM {
        return Err(Error::Config(format!(
            "layer dimensions {in_dim}x{out_dim} exceed {MAX_DIM}"
        )));
    }
    Ok(())
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f32>,
        biases: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        check_dims(in_dim, out_dim)?;
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(Error::Invariant(format!(
                "layer {in_dim}->{out_dim} given {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            vec![0.0; in_dim * out_dim],
            vec![0.0; out_dim],
            activation,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn biases(&self) -> &[f32] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f32] {
        &mut self.biases
    }

    /// Weights feeding output neuron `j`.
    #[inline]
    pub fn row(&self, j: usize) -> &[f32] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Per-layer values kept from a float forward pass for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f32>,
    pub preacts: Vec<Vec<f32>>,
    pub activations: Vec<Vec<f32>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f32] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Input to layer `l`: the network input for `l == 0`, otherwise the
    /// previous layer's activations.
    pub fn layer_input(&self, l: usize) -> &[f32] {
        if l == 0 {
            &self.input
        } else {
            &self.activations[l - 1]
        }
    }
}

fn check_chain<T>(layers: &[T], dims: impl Fn(&T) -> (usize, usize)) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("a model needs at least one layer".into()));
    }
    for (i, pair) in layers.windows(2).enumerate() {
        let (_, out) = dims(&pair[0]);
        let (next_in, _) = dims(&pair[1]);
        if out != next_in {
            return Err(Error::Invariant(format!(
                "layer {i} outputs {out} values but layer {} expects {next_in}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Full-precision model.
#[derive(Debug, Clone, PartialEq)]
pub struct FullModel {
    layers: Vec<DenseLayer>,
    pretrained: bool,
}

impl FullModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        check_chain(&layers, |l| (l.in_dim, l.out_dim))?;
        Ok(Self {
            layers,
            pretrained: false,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_dim).sum()
    }

    /// Whether the parameters came out of a training run (or a checkpoint)
    /// rather than a fresh initialization.
    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn set_pretrained(&mut self, pretrained: bool) {
        self.pretrained = pretrained;
    }

    pub fn forward(&self, x: &[f32], math: ActivationMath) -> Result<ForwardTrace> {
        forward_full(self, x, math)
    }

    pub fn predict(&self, x: &[f32], math: ActivationMath) -> Result<Vec<f32>> {
        let mut a = x.to_vec();
        check_input(self.input_dim(), x)?;
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim];
            dense(layer, &a, &mut z);
            a = z.into_iter().map(|v| layer.activation.apply(v, math)).collect();
        }
        Ok(a)
    }
}

fn check_input(expected: usize, x: &[f32]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Invariant(format!(
            "input has {} features, model expects {expected}",
            x.len()
        )));
    }
    Ok(())
}

#[inline]
fn dense(layer: &DenseLayer, input: &[f32], z: &mut [f32]) {
    for (j, zj) in z.iter_mut().enumerate() {
        let row = layer.row(j);
        *zj = layer.biases[j] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f32>();
    }
}

/// `z = W a + b`, `a = act(z)` through every layer, keeping both per layer.
pub fn forward_full(m: &FullModel, x: &[f32], math: ActivationMath) -> Result<ForwardTrace> {
    check_input(m.input_dim(), x)?;
    let mut preacts = Vec::with_capacity(m.layers.len());
    let mut activations: Vec<Vec<f32>> = Vec::with_capacity(m.layers.len());
    for layer in &m.layers {
        let input = activations.last().map(Vec::as_slice).unwrap_or(x);
        let mut z = vec![0.0; layer.out_dim];
        dense(layer, input, &mut z);
        let a = z.iter().map(|&v| layer.activation.apply(v, math)).collect();
        preacts.push(z);
        activations.push(a);
    }
    Ok(ForwardTrace {
        input: x.to_vec(),
        preacts,
        activations,
    })
}

/// Dense layer in int8.
///
/// Biases are 32-bit codes at the accumulator exponent `e_in + e_w`, so they
/// are added to the integer dot product without rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct QDenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: QTensor,
    biases: Vec<i32>,
    in_params: QuantParams,
    lut: ActivationLut,
}

impl QDenseLayer {
    pub fn new(
        weights: QTensor,
        biases: Vec<i32>,
        in_params: QuantParams,
        lut: ActivationLut,
    ) -> Result<Self> {
        let (out_dim, in_dim) = match *weights.shape() {
            [out_dim, in_dim] => (out_dim, in_dim),
            ref other => {
                return Err(Error::Invariant(format!(
                    "weight tensor must be 2-D, got shape {other:?}"
                )))
            }
        };
        check_dims(in_dim, out_dim)?;
        if biases.len() != out_dim {
            return Err(Error::Invariant(format!(
                "{} bias codes for {out_dim} outputs",
                biases.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            in_params,
            lut,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.lut.activation()
    }

    pub fn weights(&self) -> &QTensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut QTensor {
        &mut self.weights
    }

    pub fn biases(&self) -> &[i32] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [i32] {
        &mut self.biases
    }

    pub fn in_params(&self) -> QuantParams {
        self.in_params
    }

    pub fn weight_params(&self) -> QuantParams {
        self.weights.params()
    }

    pub fn preact_params(&self) -> QuantParams {
        self.lut.in_params()
    }

    pub fn act_params(&self) -> QuantParams {
        self.lut.out_params()
    }

    /// Exponent of the bias codes and of the accumulator.
    pub fn bias_exponent(&self) -> i32 {
        self.in_params.exponent() + self.weight_params().exponent()
    }

    pub fn lut(&self) -> &ActivationLut {
        &self.lut
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[i8] {
        &self.weights.codes()[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Int8 model. Every tensor exponent is fixed at quantization time.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantModel {
    layers: Vec<QDenseLayer>,
    pretrained: bool,
}

impl QuantModel {
    pub fn new(layers: Vec<QDenseLayer>) -> Result<Self> {
        check_chain(&layers, |l| (l.in_dim, l.out_dim))?;
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].act_params() != pair[1].in_params {
                return Err(Error::Invariant(format!(
                    "layer {i} emits exponent {} but layer {} expects {}",
                    pair[0].act_params().exponent(),
                    i + 1,
                    pair[1].in_params.exponent()
                )));
            }
        }
        Ok(Self {
            layers,
            pretrained: false,
        })
    }

    pub fn layers(&self) -> &[QDenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [QDenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn input_params(&self) -> QuantParams {
        self.layers[0].in_params
    }

    pub fn output_params(&self) -> QuantParams {
        self.layers[self.layers.len() - 1].act_params()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(QDenseLayer::param_count).sum()
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn set_pretrained(&mut self, pretrained: bool) {
        self.pretrained = pretrained;
    }

    pub fn quantize_input(&self, x: &[f32]) -> Result<QTensor> {
        check_input(self.input_dim(), x)?;
        quant::quantize(x, self.input_params())
    }

    pub fn forward(&self, x_q: &QTensor) -> Result<QuantTrace> {
        forward_int8(self, x_q)
    }

    /// Quantizes `x`, runs the int8 forward pass and dequantizes the output.
    pub fn predict(&self, x: &[f32]) -> Result<Vec<f32>> {
        let x_q = self.quantize_input(x)?;
        let mut a = x_q;
        for layer in &self.layers {
            let z = linear_int8(&a, layer)?;
            a = apply_lut(&z, &layer.lut)?;
        }
        Ok(quant::dequantize(&a))
    }
}

/// Codes kept from an int8 forward pass for the hybrid backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTrace {
    pub input: QTensor,
    pub preacts: Vec<QTensor>,
    pub activations: Vec<QTensor>,
}

impl QuantTrace {
    pub fn output(&self) -> &QTensor {
        self.activations.last().expect("trace of a non-empty model")
    }

    pub fn layer_input(&self, l: usize) -> &QTensor {
        if l == 0 {
            &self.input
        } else {
            &self.activations[l - 1]
        }
    }
}

/// Alternates `linear_int8` and the layer's LUT through the whole model.
pub fn forward_int8(m: &QuantModel, x_q: &QTensor) -> Result<QuantTrace> {
    if x_q.params() != m.input_params() {
        return Err(Error::Invariant(format!(
            "input exponent {} does not match model input exponent {}",
            x_q.params().exponent(),
            m.input_params().exponent()
        )));
    }
    let mut preacts = Vec::with_capacity(m.layers.len());
    let mut activations: Vec<QTensor> = Vec::with_capacity(m.layers.len());
    for layer in &m.layers {
        let input = activations.last().unwrap_or(x_q);
        let z = linear_int8(input, layer)?;
        let a = apply_lut(&z, &layer.lut)?;
        preacts.push(z);
        activations.push(a);
    }
    Ok(QuantTrace {
        input: x_q.clone(),
        preacts,
        activations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Full,
    Quantized,
}

impl Representation {
    pub fn tag(self) -> u8 {
        match self {
            Representation::Full => 0,
            Representation::Quantized => 1,
        }
    }
}

/// A model in either representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Full(FullModel),
    Quantized(QuantModel),
}

impl Model {
    pub fn representation(&self) -> Representation {
        match self {
            Model::Full(_) => Representation::Full,
            Model::Quantized(_) => Representation::Quantized,
        }
    }

    /// `(in_dim, out_dim, activation)` per layer.
    pub fn architecture(&self) -> Vec<(usize, usize, Activation)> {
        match self {
            Model::Full(m) => m
                .layers
                .iter()
                .map(|l| (l.in_dim, l.out_dim, l.activation))
                .collect(),
            Model::Quantized(m) => m
                .layers
                .iter()
                .map(|l| (l.in_dim, l.out_dim, l.activation()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Full(m) => m.input_dim(),
            Model::Quantized(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Model::Full(m) => m.output_dim(),
            Model::Quantized(m) => m.output_dim(),
        }
    }

    /// Output activations as reals. `math` only affects the float model.
    pub fn predict(&self, x: &[f32], math: ActivationMath) -> Result<Vec<f32>> {
        match self {
            Model::Full(m) => m.predict(x, math),
            Model::Quantized(m) => m.predict(x),
        }
    }
}

impl From<FullModel> for Model {
    fn from(m: FullModel) -> Self {
        Model::Full(m)
    }
}

impl From<QuantModel> for Model {
    fn from(m: QuantModel) -> Self {
        Model::Quantized(m)
    }
}
