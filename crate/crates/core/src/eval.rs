//! Classification metrics, parameter memory accounting and host timing.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::activation::ActivationMath;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward_int8, Model};
use crate::quant::{dequantize, LUT_SIZE};
use crate::train::{backward_hybrid, backward_lsgd, classify};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Scores of the positive class (index 1).
    Binary,
    /// Unweighted mean of per-class scores.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub averaging: Averaging,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Metrics {
    /// Scores from a square confusion matrix. Undefined ratios (no predicted
    /// or no actual members of a class) count as 0.
    pub fn from_confusion(confusion: Vec<Vec<usize>>, averaging: Averaging) -> Result<Self> {
        let c = confusion.len();
        if c < 2 || confusion.iter().any(|row| row.len() != c) {
            return Err(Error::Invariant("confusion matrix must be square with at least 2 classes".into()));
        }
        if averaging == Averaging::Binary && c != 2 {
            return Err(Error::Invariant("binary averaging needs a 2x2 confusion matrix".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        let per_class = |k: usize| {
            let tp = confusion[k][k];
            let predicted: usize = (0..c).map(|a| confusion[a][k]).sum();
            let actual: usize = confusion[k].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            (p, r, harmonic(p, r))
        };
        let (precision, recall, f1) = match averaging {
            Averaging::Binary => per_class(1),
            Averaging::Macro => {
                let scores: Vec<_> = (0..c).map(per_class).collect();
                let mean = |f: fn(&(f64, f64, f64)) -> f64| scores.iter().map(f).sum::<f64>() / c as f64;
                (mean(|s| s.0), mean(|s| s.1), mean(|s| s.2))
            }
        };
        Ok(Self {
            confusion,
            precision,
            recall,
            f1,
            accuracy: ratio(correct, total),
            averaging,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// One JSON object with precision, recall, f1, accuracy and confusion.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let avg = match self.averaging {
            Averaging::Binary => "binary, positive class",
            Averaging::Macro => "macro-averaged",
        };
        writeln!(f, "metric     value   ({avg}, n = {})", self.sample_count())?;
        writeln!(f, "precision  {:.4}", self.precision)?;
        writeln!(f, "recall     {:.4}", self.recall)?;
        writeln!(f, "f1         {:.4}", self.f1)?;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "confusion (rows actual, columns predicted)")?;
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
            writeln!(f, "{}", cells.join(""))?;
        }
        Ok(())
    }
}

fn check_dims(m: &Model, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    if m.input_dim() != ds.n_features() || m.output_dim() != ds.n_outputs() {
        return Err(Error::Config(format!(
            "model maps {} -> {} but the data has {} features and {} targets",
            m.input_dim(),
            m.output_dim(),
            ds.n_features(),
            ds.n_outputs()
        )));
    }
    Ok(())
}

/// Scores `m` on `ds`: binary scores for single-output models, macro
/// averages otherwise.
pub fn evaluate(m: &Model, ds: &Dataset, math: ActivationMath) -> Result<Metrics> {
    check_dims(m, ds)?;
    let c = ds.n_classes();
    let mut confusion = vec![vec![0usize; c]; c];
    for (i, (x, _)) in ds.rows().enumerate() {
        let predicted = classify(&m.predict(x, math)?);
        confusion[ds.labels()[i]][predicted] += 1;
    }
    let averaging = if ds.is_binary() {
        Averaging::Binary
    } else {
        Averaging::Macro
    };
    Metrics::from_confusion(confusion, averaging)
}

/// Parameter storage of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamBytes {
    pub weights: usize,
    pub biases: usize,
    pub luts: usize,
}

impl ParamBytes {
    /// f32 for every float parameter; int8 weight codes, i32 bias codes and a
    /// 256-byte table per layer for quantized models.
    pub fn of(m: &Model) -> Self {
        match m {
            Model::Full(f) => {
                let weights = f.layers().iter().map(|l| l.weights().len()).sum::<usize>();
                let biases = f.layers().iter().map(|l| l.biases().len()).sum::<usize>();
                Self {
                    weights: weights * 4,
                    biases: biases * 4,
                    luts: 0,
                }
            }
            Model::Quantized(q) => Self {
                weights: q.layers().iter().map(|l| l.weights().len()).sum(),
                biases: q.layers().iter().map(|l| l.biases().len() * 4).sum(),
                luts: q.layers().len() * LUT_SIZE,
            },
        }
    }

    pub fn total(&self) -> usize {
        self.weights + self.biases + self.luts
    }

    pub fn excluding_luts(&self) -> usize {
        self.weights + self.biases
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryReport {
    pub full: ParamBytes,
    pub quantized: ParamBytes,
    /// Full bytes over quantized bytes including LUTs.
    pub ratio: f64,
    pub ratio_excluding_luts: f64,
}

impl MemoryReport {
    /// Ratios rounded to two decimals.
    pub fn rounded(&self) -> (f64, f64) {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        (r(self.ratio), r(self.ratio_excluding_luts))
    }
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "                weights  biases    luts   total")?;
        for (name, b) in [("first model", self.full), ("second model", self.quantized)] {
            writeln!(
                f,
                "{name:<14}{:>9}{:>8}{:>8}{:>8}",
                b.weights,
                b.biases,
                b.luts,
                b.total()
            )?;
        }
        writeln!(f, "ratio                 {:.2}", self.ratio)?;
        writeln!(f, "ratio excluding LUTs  {:.2}", self.ratio_excluding_luts)
    }
}

pub fn memory_report(full: &Model, q: &Model) -> Result<MemoryReport> {
    if full.architecture() != q.architecture() {
        return Err(Error::Config("memory report needs two models of the same architecture".into()));
    }
    let full_bytes = ParamBytes::of(full);
    let q_bytes = ParamBytes::of(q);
    Ok(MemoryReport {
        full: full_bytes,
        quantized: q_bytes,
        ratio: full_bytes.total() as f64 / q_bytes.total() as f64,
        ratio_excluding_luts: full_bytes.excluding_luts() as f64 / q_bytes.excluding_luts() as f64,
    })
}

/// Wall time of one training step (forward plus backward), in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub reps: usize,
    pub mean_us: f64,
    pub stddev_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.3} us/sample (sd {:.3}, min {:.3}, max {:.3}) over {} reps of {} samples",
            self.mean_us, self.stddev_us, self.min_us, self.max_us, self.reps, self.samples
        )
    }
}

/// Times per-sample training steps on a copy of `m`. One untimed pass warms
/// up; each rep then runs every sample of `ds` once and contributes its mean
/// time per sample.
pub fn bench_per_sample(m: &Model, ds: &Dataset, reps: usize, lr: f32, math: ActivationMath) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::Config("bench needs at least one rep".into()));
    }
    check_dims(m, ds)?;
    let mut work = m.clone();
    let pass = |work: &mut Model| -> Result<()> {
        for (x, t) in ds.rows() {
            match work {
                Model::Full(f) => {
                    let trace = f.forward(x, math)?;
                    backward_lsgd(&trace, t, f, lr)?;
                }
                Model::Quantized(q) => {
                    let xq = q.quantize_input(x)?;
                    let trace = forward_int8(q, &xq)?;
                    std::hint::black_box(dequantize(trace.output()));
                    backward_hybrid(&trace, t, q, lr, None)?;
                }
            }
        }
        Ok(())
    };
    pass(&mut work)?;
    let mut per_sample = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        pass(&mut work)?;
        per_sample.push(start.elapsed().as_secs_f64() * 1e6 / ds.len() as f64);
    }
    let mean = per_sample.iter().sum::<f64>() / reps as f64;
    let var = per_sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps as f64;
    Ok(BenchReport {
        samples: ds.len(),
        reps,
        mean_us: mean,
        stddev_us: var.sqrt(),
        min_us: per_sample.iter().cloned().fold(f64::INFINITY, f64::min),
        max_us: per_sample.iter().cloned().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{car_evaluation, split};
    use crate::nn::{build_model, quantize_model, Architecture, QuantizeOptions};
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_confusion(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]], Averaging::Macro).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn binary_hand_case() {
        // TP=3, FP=1, FN=1, TN=5
        let m = Metrics::from_confusion(vec![vec![5, 1], vec![1, 3]], Averaging::Binary).unwrap();
        assert!(close(m.precision, 0.75));
        assert!(close(m.recall, 0.75));
        assert!(close(m.f1, 0.75));
        assert!(close(m.accuracy, 0.8));
    }

    #[test]
    fn macro_hand_case() {
        // class 0 perfect (f1 1); class 1: p=1/2, r=1/2 (f1 1/2); class 2 never right (f1 0).
        let m = Metrics::from_confusion(
            vec![vec![2, 0, 0], vec![0, 1, 1], vec![0, 1, 0]],
            Averaging::Macro,
        )
        .unwrap();
        assert!(close(m.f1, 0.5));
        assert!(close(m.precision, 0.5));
        assert!(close(m.recall, 0.5));
        assert!(close(m.accuracy, 0.6));
        let json: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in ["precision", "recall", "f1", "accuracy", "confusion"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn memory_report_reference_shapes() {
        let cog = build_model(&Architecture::CogDist.into(), 0).unwrap();
        let cog_q = quantize_model(&cog, &QuantizeOptions::default(), None).unwrap();
        let r = memory_report(&cog.clone().into(), &cog_q.into()).unwrap();
        assert_eq!(r.full.total(), 6500);
        assert_eq!(r.quantized.weights, 1552);
        assert_eq!(r.quantized.biases, 292);
        assert_eq!(r.quantized.total(), 2612);
        assert_eq!(r.rounded(), (2.49, 3.52));

        let car = build_model(&Architecture::CarEvaluation.into(), 0).unwrap();
        let car_q = quantize_model(&car, &QuantizeOptions::default(), None).unwrap();
        let r = memory_report(&car.clone().into(), &car_q.into()).unwrap();
        assert_eq!(r.full.total(), 3280);
        assert_eq!((r.quantized.weights, r.quantized.biases), (768, 208));
        assert_eq!(r.rounded().1, 3.36);

        let same = memory_report(&car.clone().into(), &car.into()).unwrap();
        assert_eq!(same.ratio, 1.0);
        assert!(memory_report(&cog.into(), &car_q_model()).is_err());
    }

    fn car_q_model() -> Model {
        let car = build_model(&Architecture::CarEvaluation.into(), 0).unwrap();
        quantize_model(&car, &QuantizeOptions::default(), None).unwrap().into()
    }

    #[test]
    fn evaluate_checks_dimensions() {
        let (_, val) = split(&car_evaluation(), 0.8, 0, true).unwrap();
        let cog: Model = build_model(&Architecture::CogDist.into(), 0).unwrap().into();
        assert!(matches!(evaluate(&cog, &val, ActivationMath::Fast), Err(Error::Config(_))));
        let m = evaluate(&car_q_model(), &val, ActivationMath::Fast).unwrap();
        assert_eq!(m.sample_count(), val.len());
        assert_eq!(m.averaging, Averaging::Macro);
    }

    #[test]
    fn bench_reports_positive_finite_times() {
        let (_, val) = split(&car_evaluation(), 0.8, 0, true).unwrap();
        let small = val.subset(&(0..20).collect::<Vec<_>>());
        for m in [build_model(&Architecture::CarEvaluation.into(), 0).unwrap().into(), car_q_model()] {
            let r = bench_per_sample(&m, &small, 1, 0.01, ActivationMath::Fast).unwrap();
            assert!(r.mean_us.is_finite() && r.mean_us > 0.0);
            let r = bench_per_sample(&m, &small, 5, 0.01, ActivationMath::Fast).unwrap();
            assert!(r.min_us <= r.mean_us && r.mean_us <= r.max_us);
        }
        let m = car_q_model();
        assert!(bench_per_sample(&m, &small, 0, 0.01, ActivationMath::Fast).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn evaluation_ignores_sample_order(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (_, val) = split(&car_evaluation(), 0.8, 0, true).unwrap();
            let m: Model = build_model(&Architecture::CarEvaluation.into(), seed).unwrap().into();
            let mut order: Vec<usize> = (0..val.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = evaluate(&m, &val, ActivationMath::Fast).unwrap();
            let b = evaluate(&m, &val.subset(&order), ActivationMath::Fast).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn metrics_invariants(cells in proptest::collection::vec(0usize..20, 9)) {
            let confusion: Vec<Vec<usize>> = cells.chunks(3).map(|c| c.to_vec()).collect();
            prop_assume!(cells.iter().sum::<usize>() > 0);
            let m = Metrics::from_confusion(confusion.clone(), Averaging::Macro).unwrap();
            let total: usize = cells.iter().sum();
            let trace: usize = (0..3).map(|k| confusion[k][k]).sum();
            prop_assert_eq!(m.accuracy, trace as f64 / total as f64);
            for v in [m.precision, m.recall, m.f1, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let binary = vec![confusion[0][..2].to_vec(), confusion[1][..2].to_vec()];
            if binary.iter().flatten().sum::<usize>() > 0 {
                let b = Metrics::from_confusion(binary, Averaging::Binary).unwrap();
                prop_assert!((b.f1 - harmonic(b.precision, b.recall)).abs() < 1e-12);
            }
        }
    }
}
