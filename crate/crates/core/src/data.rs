//! Datasets: loading, encoding, normalization and splitting.
//!
//! Features are always fed to models in `[-1, 1]`. The car dataset is encoded
//! with fixed ordinal tables and is normalized on load. Numeric CSVs and the
//! synthetic generator produce raw features; [`split`] fits min/max on the
//! training rows only and applies it to both sides, clipping validation
//! values that fall outside the training range.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Canonical number of rows in the UCI car evaluation file.
pub const CAR_EVALUATION_ROWS: usize = 1728;

/// The UCI car evaluation data, bundled so the CLI can run without a download.
pub const CAR_EVALUATION_CSV: &str = include_str!("../data/car.data");

/// Attribute columns of the car file with their categories in ascending order.
pub const CAR_ATTRIBUTES: [(&str, &[&str]); 6] = [
    ("buying", &["low", "med", "high", "vhigh"]),
    ("maint", &["low", "med", "high", "vhigh"]),
    ("doors", &["2", "3", "4", "5more"]),
    ("persons", &["2", "4", "more"]),
    ("lug_boot", &["small", "med", "big"]),
    ("safety", &["low", "med", "high"]),
];

pub const CAR_CLASSES: [&str; 4] = ["unacc", "acc", "good", "vgood"];

pub const COGDIST_ROWS: usize = 3600;
pub const COGDIST_FEATURES: usize = 6;

/// How the trailing CSV columns encode the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// One column holding 0 or 1.
    Binary,
    /// `c` columns, exactly one of which is 1.
    OneHot(usize),
}

impl TargetKind {
    pub fn columns(self) -> usize {
        match self {
            TargetKind::Binary => 1,
            TargetKind::OneHot(c) => c,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            TargetKind::Binary => 2,
            TargetKind::OneHot(c) => c,
        }
    }
}

/// Per-feature min/max mapping raw values onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    /// Fits on `rows`, a flat row-major buffer with `d` columns.
    pub fn fit(rows: &[f32], d: usize) -> Self {
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in rows.chunks_exact(d) {
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v as f64);
                max[k] = max[k].max(v as f64);
            }
        }
        Self { min, max }
    }

    /// Maps feature `k` into `[-1, 1]`, clipping out-of-range values. A
    /// constant feature maps to 0.
    pub fn apply(&self, k: usize, v: f32) -> f32 {
        let range = self.max[k] - self.min[k];
        if range <= 0.0 {
            return 0.0;
        }
        let scaled = 2.0 * (v as f64 - self.min[k]) / range - 1.0;
        scaled.clamp(-1.0, 1.0) as f32
    }

    pub fn invert(&self, k: usize, v: f32) -> f64 {
        let range = self.max[k] - self.min[k];
        if range <= 0.0 {
            return self.min[k];
        }
        self.min[k] + (v as f64 + 1.0) * range / 2.0
    }

    fn apply_rows(&self, rows: &mut [f32], d: usize) {
        for row in rows.chunks_exact_mut(d) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.apply(k, *v);
            }
        }
    }
}

/// Row-major features and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    n_features: usize,
    targets: Vec<f32>,
    n_outputs: usize,
    labels: Vec<usize>,
    class_names: Vec<String>,
    normalization: Option<Normalization>,
}

impl Dataset {
    /// Builds a dataset from raw parts. `labels` are class indices; targets are
    /// derived from them (one column for two classes, one-hot otherwise).
    pub fn from_labels(
        features: Vec<f32>,
        n_features: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
        normalization: Option<Normalization>,
    ) -> Result<Self> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(Error::Invariant(format!(
                "{} feature values for {} samples of {n_features} features",
                features.len(),
                labels.len()
            )));
        }
        let n_classes = class_names.len();
        if n_classes < 2 {
            return Err(Error::Config("a dataset needs at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Invariant(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        let n_outputs = if n_classes == 2 { 1 } else { n_classes };
        let mut targets = vec![0.0; labels.len() * n_outputs];
        for (row, &label) in targets.chunks_exact_mut(n_outputs).zip(&labels) {
            if n_outputs == 1 {
                row[0] = label as f32;
            } else {
                row[label] = 1.0;
            }
        }
        Ok(Self {
            features,
            n_features,
            targets,
            n_outputs,
            labels,
            class_names,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Width of the target vector: 1 for binary tasks.
    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_binary(&self) -> bool {
        self.n_classes() == 2
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    #[inline]
    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn target_row(&self, i: usize) -> &[f32] {
        &self.targets[i * self.n_outputs..(i + 1) * self.n_outputs]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f32], &[f32])> + '_ {
        self.features
            .chunks_exact(self.n_features)
            .zip(self.targets.chunks_exact(self.n_outputs))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut targets = Vec::with_capacity(indices.len() * self.n_outputs);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
            targets.extend_from_slice(self.target_row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            n_features: self.n_features,
            targets,
            n_outputs: self.n_outputs,
            labels,
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }
}

fn csv_reader<R: Read>(input: R, has_header: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn record_row(record: &csv::StringRecord, fallback: usize) -> usize {
    record
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format_at_row(row, format!("{other:?}")),
    }
}

/// Parses the UCI car layout: six categorical attributes then the class, no header.
pub fn parse_car_evaluation<R: Read>(input: R) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in csv_reader(input, false).records().enumerate() {
        let record = record.map_err(csv_error)?;
        let row = record_row(&record, i + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != CAR_ATTRIBUTES.len() + 1 {
            return Err(Error::format_at_row(
                row,
                format!("expected 7 columns, found {}", record.len()),
            ));
        }
        for (col, (name, levels)) in CAR_ATTRIBUTES.iter().enumerate() {
            let token = &record[col];
            let level = levels.iter().position(|&l| l == token).ok_or_else(|| Error::Parse {
                row,
                column: col + 1,
                message: format!("unknown {name} category `{token}`"),
            })?;
            features.push(ordinal_to_unit(level, levels.len()));
        }
        let token = &record[CAR_ATTRIBUTES.len()];
        let class = CAR_CLASSES.iter().position(|&c| c == token).ok_or_else(|| Error::Parse {
            row,
            column: CAR_ATTRIBUTES.len() + 1,
            message: format!("unknown class `{token}`"),
        })?;
        labels.push(class);
    }
    if labels.len() != CAR_EVALUATION_ROWS {
        log::warn!(
            "car evaluation file has {} rows, the canonical file has {CAR_EVALUATION_ROWS}",
            labels.len()
        );
    }
    let normalization = Normalization {
        min: vec![0.0; CAR_ATTRIBUTES.len()],
        max: CAR_ATTRIBUTES
            .iter()
            .map(|(_, levels)| (levels.len() - 1) as f64)
            .collect(),
    };
    Dataset::from_labels(
        features,
        CAR_ATTRIBUTES.len(),
        labels,
        CAR_CLASSES.iter().map(|s| s.to_string()).collect(),
        Some(normalization),
    )
}

fn ordinal_to_unit(level: usize, levels: usize) -> f32 {
    (2.0 * level as f64 / (levels - 1) as f64 - 1.0) as f32
}

pub fn load_car_evaluation(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_car_evaluation(std::fs::File::open(path)?)
}

/// The bundled copy of the canonical car file.
pub fn car_evaluation() -> Dataset {
    parse_car_evaluation(CAR_EVALUATION_CSV.as_bytes()).expect("bundled car data parses")
}

/// Numeric CSV: `n_features` feature columns followed by the target column(s).
/// Features are left raw; [`split`] normalizes them.
pub fn parse_csv_generic<R: Read>(
    input: R,
    n_features: usize,
    target_kind: TargetKind,
    has_header: bool,
) -> Result<Dataset> {
    if n_features == 0 {
        return Err(Error::Config("need at least one feature column".into()));
    }
    if let TargetKind::OneHot(c) = target_kind {
        if c < 2 {
            return Err(Error::Config("one-hot targets need at least two classes".into()));
        }
    }
    let expected = n_features + target_kind.columns();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in csv_reader(input, has_header).records().enumerate() {
        let record = record.map_err(csv_error)?;
        let row = record_row(&record, i + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != expected {
            return Err(Error::format_at_row(
                row,
                format!("expected {expected} columns, found {}", record.len()),
            ));
        }
        let mut values = Vec::with_capacity(expected);
        for (col, cell) in record.iter().enumerate() {
            let v: f32 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: col + 1,
                    message: format!("`{cell}` is not finite"),
                });
            }
            values.push(v);
        }
        let target = &values[n_features..];
        let label = match target_kind {
            TargetKind::Binary => match target[0] {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                v => {
                    return Err(Error::Parse {
                        row,
                        column: n_features + 1,
                        message: format!("binary target must be 0 or 1, got {v}"),
                    })
                }
            },
            TargetKind::OneHot(_) => {
                let ones: Vec<usize> = (0..target.len()).filter(|&k| target[k] == 1.0).collect();
                let valid = ones.len() == 1 && target.iter().all(|&v| v == 0.0 || v == 1.0);
                if !valid {
                    return Err(Error::Parse {
                        row,
                        column: n_features + 1,
                        message: "target columns are not one-hot".into(),
                    });
                }
                ones[0]
            }
        };
        features.extend_from_slice(&values[..n_features]);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::InvalidData("CSV contains no samples".into()));
    }
    let class_names = (0..target_kind.classes()).map(|c| c.to_string()).collect();
    Dataset::from_labels(features, n_features, labels, class_names, None)
}

pub fn load_csv_generic(
    path: impl AsRef<Path>,
    n_features: usize,
    target_kind: TargetKind,
    has_header: bool,
) -> Result<Dataset> {
    parse_csv_generic(std::fs::File::open(path)?, n_features, target_kind, has_header)
}

/// Feature rows with exactly `n_features` numeric columns and no header,
/// returned flat and row-major. Used for quantization calibration sets.
pub fn parse_feature_rows<R: Read>(input: R, n_features: usize) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for (i, record) in csv_reader(input, false).records().enumerate() {
        let record = record.map_err(csv_error)?;
        let row = record_row(&record, i + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != n_features {
            return Err(Error::format_at_row(
                row,
                format!("expected {n_features} columns, found {}", record.len()),
            ));
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f32 = cell.parse().ok().filter(|v: &f32| v.is_finite()).ok_or_else(|| Error::Parse {
                row,
                column: col + 1,
                message: format!("`{cell}` is not a finite number"),
            })?;
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidData("no feature rows".into()));
    }
    Ok(out)
}

/// Stand-in for the non-public cognitive-distraction data: 3600 samples, six
/// features, binary labels.
///
/// Each class is a mixture of two unit-variance Gaussian clusters placed so
/// neither class is linearly separable from the other; 5% of labels are then
/// flipped. Features are raw (roughly within ±5).
pub fn synth_cogdist(seed: u64) -> Dataset {
    const CENTERS: [[[f32; COGDIST_FEATURES]; 2]; 2] = [
        [
            [1.5, 1.5, 0.0, 1.0, -0.5, 0.5],
            [-1.5, -1.5, 0.0, -1.0, 0.5, -0.5],
        ],
        [
            [1.5, -1.5, 1.0, 0.0, 0.5, 0.5],
            [-1.5, 1.5, -1.0, 0.0, -0.5, -0.5],
        ],
    ];
    const LABEL_NOISE: f64 = 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(COGDIST_ROWS * COGDIST_FEATURES);
    let mut labels = Vec::with_capacity(COGDIST_ROWS);
    for i in 0..COGDIST_ROWS {
        let class = i % 2;
        let cluster = rng.random_range(0..2);
        for &c in &CENTERS[class][cluster] {
            features.push(c + noise.sample(&mut rng));
        }
        let flipped = rng.random_bool(LABEL_NOISE);
        labels.push(if flipped { 1 - class } else { class });
    }
    Dataset::from_labels(
        features,
        COGDIST_FEATURES,
        labels,
        vec!["attentive".into(), "distracted".into()],
        None,
    )
    .expect("generator output is consistent")
}

/// Train/validation split.
///
/// The training side receives `floor(n * train_fraction)` rows in a seeded
/// random order, which is then the fixed per-epoch order. The validation side
/// keeps file order. With `stratified`, every class contributes in proportion
/// (within one row) and at least one row to each side.
pub fn split(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "{n} samples cannot be split at fraction {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = if stratified {
        stratified_train_indices(ds, train_fraction, n_train, &mut rng)?
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(n_train);
        all
    };
    let mut in_train = vec![false; n];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let val_idx: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    train_idx.shuffle(&mut rng);

    let mut train = ds.subset(&train_idx);
    let mut val = ds.subset(&val_idx);
    if !ds.is_normalized() {
        let norm = Normalization::fit(&train.features, ds.n_features);
        norm.apply_rows(&mut train.features, ds.n_features);
        norm.apply_rows(&mut val.features, ds.n_features);
        train.normalization = Some(norm.clone());
        val.normalization = Some(norm);
    }
    Ok((train, val))
}

fn stratified_train_indices(
    ds: &Dataset,
    fraction: f64,
    n_train: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "class `{}` has {} samples; stratified splitting needs at least 2",
                ds.class_names[c],
                members.len()
            )));
        }
    }
    // Floor per class, then hand the leftover rows to the largest remainders.
    let ideal: Vec<f64> = by_class.iter().map(|m| m.len() as f64 * fraction).collect();
    let mut take: Vec<usize> = ideal.iter().map(|&x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..take.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut leftover = n_train.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if leftover == 0 {
            break;
        }
        if take[c] + 1 < by_class[c].len() {
            take[c] += 1;
            leftover -= 1;
        }
    }
    for (c, t) in take.iter_mut().enumerate() {
        *t = (*t).clamp(1, by_class[c].len() - 1);
    }
    let mut out = Vec::with_capacity(n_train);
    for (members, &t) in by_class.iter_mut().zip(&take) {
        members.shuffle(rng);
        out.extend_from_slice(&members[..t]);
    }
    Ok(out)
}
