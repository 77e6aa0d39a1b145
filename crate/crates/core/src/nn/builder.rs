use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DenseLayer, FullModel};
use crate::activation::Activation;
use crate::error::{Error, Result};

/// The two reference network shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// 6 -> 40 (tanh) -> 32 (tanh) -> 1 (sigmoid), binary.
    CogDist,
    /// 6 -> 32 (tanh) -> 16 (tanh) -> 4 (sigmoid), four classes.
    CarEvaluation,
}

impl Architecture {
    pub fn input_dim(self) -> usize {
        6
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        let dims: &[(usize, Activation)] = match self {
            Architecture::CogDist => &[
                (40, Activation::Tanh),
                (32, Activation::Tanh),
                (1, Activation::Sigmoid),
            ],
            Architecture::CarEvaluation => &[
                (32, Activation::Tanh),
                (16, Activation::Tanh),
                (4, Activation::Sigmoid),
            ],
        };
        dims.iter()
            .map(|&(out_dim, activation)| LayerSpec {
                out_dim,
                activation,
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::CogDist => "cogdist",
            Architecture::CarEvaluation => "car_evaluation",
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cogdist" => Ok(Architecture::CogDist),
            "car_evaluation" | "car-evaluation" | "car" => Ok(Architecture::CarEvaluation),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (expected cogdist or car_evaluation)"
            ))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Named(Architecture),
    Layers {
        input_dim: usize,
        layers: Vec<LayerSpec>,
    },
}

impl From<Architecture> for ModelSpec {
    fn from(arch: Architecture) -> Self {
        ModelSpec::Named(arch)
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<FullModel> {
    let (input_dim, layers) = match spec {
        ModelSpec::Named(arch) => (arch.input_dim(), arch.layers()),
        ModelSpec::Layers { input_dim, layers } => (*input_dim, layers.clone()),
    };
    if layers.is_empty() {
        return Err(Error::Config("a model needs at least one layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_dim = input_dim;
    let mut built = Vec::with_capacity(layers.len());
    for spec in layers {
        let mut layer = DenseLayer::zeros(in_dim, spec.out_dim, spec.activation)?;
        let limit = (6.0 / (in_dim + spec.out_dim) as f32).sqrt();
        for w in layer.weights_mut() {
            *w = rng.random_range(-limit..=limit);
        }
        built.push(layer);
        in_dim = spec.out_dim;
    }
    FullModel::new(built)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shapes() {
        let cog = build_model(&Architecture::CogDist.into(), 0).unwrap();
        let dims: Vec<_> = cog
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim(), l.activation()))
            .collect();
        assert_eq!(
            dims,
            vec![
                (6, 40, Activation::Tanh),
                (40, 32, Activation::Tanh),
                (32, 1, Activation::Sigmoid)
            ]
        );
        assert_eq!(cog.param_count(), 6 * 40 + 40 + 40 * 32 + 32 + 32 + 1);
        assert_eq!(cog.param_count(), 1625);

        let car = build_model(&Architecture::CarEvaluation.into(), 0).unwrap();
        let dims: Vec<_> = car
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim(), l.activation()))
            .collect();
        assert_eq!(
            dims,
            vec![
                (6, 32, Activation::Tanh),
                (32, 16, Activation::Tanh),
                (16, 4, Activation::Sigmoid)
            ]
        );
        assert_eq!(car.param_count(), 820);
    }

    #[test]
    fn seeded_and_bounded() {
        let a = build_model(&Architecture::CarEvaluation.into(), 42).unwrap();
        let b = build_model(&Architecture::CarEvaluation.into(), 42).unwrap();
        let c = build_model(&Architecture::CarEvaluation.into(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in a.layers() {
            let limit = (6.0 / (l.in_dim() + l.out_dim()) as f32).sqrt();
            assert!(l.weights().iter().all(|w| w.abs() <= limit));
            assert!(l.biases().iter().all(|&b| b == 0.0));
        }
        assert!(!a.is_pretrained());
    }

    #[test]
    fn bad_specs_rejected() {
        let zero = ModelSpec::Layers {
            input_dim: 0,
            layers: vec![LayerSpec {
                out_dim: 2,
                activation: Activation::Tanh,
            }],
        };
        assert!(matches!(build_model(&zero, 0), Err(Error::Config(_))));
        let empty = ModelSpec::Layers {
            input_dim: 3,
            layers: vec![],
        };
        assert!(matches!(build_model(&empty, 0), Err(Error::Config(_))));
        assert!("resnet".parse::<Architecture>().is_err());
        assert_eq!(
            "car_evaluation".parse::<Architecture>().unwrap(),
            Architecture::CarEvaluation
        );
    }
}
