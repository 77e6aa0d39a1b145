use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lsgd::activation::ActivationMath;
use lsgd::data::{self, Dataset, TargetKind};
use lsgd::eval::{bench_per_sample, evaluate, memory_report};
use lsgd::nn::{build_model, load_model, quantize_model, save_model, Architecture, Model, QuantizeOptions};
use lsgd::train::{self, EpochRecord, TrainConfig};
use lsgd::{Error, Result};

const LONG_ABOUT: &str = "\
Train tiny fully-connected classifiers in float, quantize them to int8 and
fine-tune the int8 model with a float backward pass.

Multi-class precision, recall and F1 are macro-averaged (unweighted mean over
classes); binary tasks report the positive class. Training visits samples in a
fixed seeded order unless --shuffle is given.";

#[derive(Parser)]
#[command(name = "lsgd", version, about = "Tiny-MLP training with an int8 fine-tuning path", long_about = LONG_ABOUT)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `car` (bundled UCI car evaluation), `synth-cogdist`, or a CSV path.
    #[arg(long, global = true, default_value = "car")]
    dataset: String,
    /// cogdist or car_evaluation. Defaults from the dataset.
    #[arg(long, global = true)]
    arch: Option<Architecture>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Defaults to 0.01 for `train` and 0.05 for `finetune`.
    #[arg(long, global = true)]
    lr: Option<f32>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Visit training samples in stored order (the default).
    #[arg(long, global = true, conflicts_with = "shuffle")]
    no_shuffle: bool,
    /// Reshuffle the training split every epoch.
    #[arg(long, global = true)]
    shuffle: bool,
    #[arg(long, global = true, default_value = "fast")]
    activation_math: ActivationMath,
    /// Output file of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Fraction of the data used for training.
    #[arg(long, global = true, default_value_t = 0.8)]
    split: f64,
    /// Log per-epoch progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a float model; writes the model and a curve CSV.
    Train {
        /// Curve CSV path [default: <out>.curves.csv]
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Quantize a float model file to int8.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        /// CSV of input rows (already in model input space, no header) used to
        /// fit the input and pre-activation exponents.
        #[arg(long, conflicts_with = "calibrate_on_train")]
        calibration: Option<PathBuf>,
        /// Calibrate on the training split of --dataset.
        #[arg(long)]
        calibrate_on_train: bool,
    },
    /// Fine-tune a quantized model (int8 forward, float backward).
    ///
    /// Without --model a randomly initialized model is quantized and trained,
    /// which is expected to saturate.
    Finetune {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Curve CSV path [default: <out>.curves.csv]
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Keep per-weight residuals of updates lost to requantization.
        #[arg(long)]
        error_feedback: bool,
    },
    /// Precision, recall, F1 and accuracy of a model file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Side::Validation)]
        on: Side,
        /// Print one JSON object instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Parameter bytes of a float model and its int8 counterpart.
    ReportMemory {
        /// Float model file [default: freshly built --arch model]
        #[arg(long)]
        model: Option<PathBuf>,
        /// Quantized model file [default: --model quantized]
        #[arg(long)]
        quantized: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Host time per training sample, float and int8 (informational).
    Bench {
        /// Float model file [default: freshly built --arch model]
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Re-emit a curve CSV, optionally with a text sparkline summary.
    Curves {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sparkline: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Train,
    Validation,
    All,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let mut lines = text.lines();
            let first = lines.next().unwrap_or_default();
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            for line in lines {
                eprintln!("{line}");
            }
            return ExitCode::from(2);
        }
    };
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_logging(verbose: bool) {
    env_logger::Builder::new()
        .filter_level(if verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format(|buf, record| {
            let level = match record.level() {
                log::Level::Warn => "warning",
                log::Level::Error => "error",
                _ => "info",
            };
            writeln!(buf, "{level}: {}", record.args())
        })
        .init();
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Train { curves } => cmd_train(g, curves.as_deref()),
        Command::Quantize {
            model,
            calibration,
            calibrate_on_train,
        } => cmd_quantize(g, model, calibration.as_deref(), *calibrate_on_train),
        Command::Finetune {
            model,
            curves,
            error_feedback,
        } => cmd_finetune(g, model.as_deref(), curves.as_deref(), *error_feedback),
        Command::Eval { model, on, json } => cmd_eval(g, model, *on, *json),
        Command::ReportMemory {
            model,
            quantized,
            json,
        } => cmd_report_memory(g, model.as_deref(), quantized.as_deref(), *json),
        Command::Bench { model, reps } => cmd_bench(g, model.as_deref(), *reps),
        Command::Curves { input, sparkline } => cmd_curves(g, input, *sparkline),
    }
}

fn arch_for(g: &Global) -> Architecture {
    g.arch.unwrap_or(match g.dataset.as_str() {
        "synth-cogdist" => Architecture::CogDist,
        _ => Architecture::CarEvaluation,
    })
}

/// Loads `--dataset` for a model with the given input and output widths.
///
/// A CSV whose first row is all numbers is read as numeric features followed
/// by the target column(s). Otherwise a four-output model reads the UCI car
/// layout and any other model reads a numeric CSV with a header row.
fn load_dataset(g: &Global, input_dim: usize, n_outputs: usize) -> Result<Dataset> {
    match g.dataset.as_str() {
        "car" => Ok(data::car_evaluation()),
        "synth-cogdist" => Ok(data::synth_cogdist(g.seed)),
        path => {
            let text = std::fs::read_to_string(path)?;
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
            let numeric = first.split(',').all(|c| c.trim().parse::<f32>().is_ok());
            let target = if n_outputs == 1 {
                TargetKind::Binary
            } else {
                TargetKind::OneHot(n_outputs)
            };
            if !numeric && input_dim == 6 && n_outputs == 4 {
                data::parse_car_evaluation(text.as_bytes())
            } else {
                data::parse_csv_generic(text.as_bytes(), input_dim, target, !numeric)
            }
        }
    }
}

fn splits(g: &Global, input_dim: usize, n_outputs: usize) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(g, input_dim, n_outputs)?;
    data::split(&ds, g.split, g.seed, true)
}

fn train_config(g: &Global, base: TrainConfig, error_feedback: bool) -> TrainConfig {
    TrainConfig {
        learning_rate: g.lr.unwrap_or(base.learning_rate),
        shuffle: g.shuffle && !g.no_shuffle,
        seed: g.seed,
        activation_math: g.activation_math,
        error_feedback,
        ..base
    }
}

/// Runs training on a worker thread and reports epochs from this one.
fn with_progress<T, F>(label: &str, work: F) -> Result<T>
where
    T: Send,
    F: FnOnce(&mut dyn FnMut(&EpochRecord)) -> Result<T> + Send,
{
    let (tx, rx) = mpsc::channel::<EpochRecord>();
    thread::scope(|s| {
        let worker = s.spawn(move || work(&mut |r| {
            let _ = tx.send(*r);
        }));
        for r in rx {
            log::info!(
                "{label} epoch {:>3}: train_acc {:.4} val_acc {:.4} loss {:.6}",
                r.epoch,
                r.train_acc,
                r.val_acc,
                r.train_loss
            );
        }
        worker.join().expect("training thread panicked")
    })
}

fn curves_path(out: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("curves.csv"))
}

fn write_curves(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    train::write_curve_csv(records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn summarize(what: &str, records: &[EpochRecord]) {
    if let Some(last) = records.last() {
        println!(
            "{what} for {} epochs: train_acc {:.4} val_acc {:.4} train_loss {:.6}",
            last.epoch, last.train_acc, last.val_acc, last.train_loss
        );
    }
}

fn cmd_train(g: &Global, curves: Option<&Path>) -> Result<()> {
    let arch = arch_for(g);
    let mut model = build_model(&arch.into(), g.seed)?;
    let (train_ds, val_ds) = splits(g, model.input_dim(), model.output_dim())?;
    let cfg = train_config(g, TrainConfig::new(g.epochs.unwrap_or(100)), false);
    let records = with_progress("train", |cb| {
        train::train_full_with(&mut model, &train_ds, &val_ds, &cfg, cb)
    })?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("model.bin"));
    let curves = curves_path(&out, curves);
    save_model(&Model::Full(model), &out)?;
    write_curves(&curves, &records)?;
    summarize(&format!("trained {arch}"), &records);
    println!("model: {}", out.display());
    println!("curves: {}", curves.display());
    Ok(())
}

fn load_full(path: &Path) -> Result<lsgd::nn::FullModel> {
    match load_model(path)? {
        Model::Full(m) => Ok(m),
        Model::Quantized(_) => Err(Error::Config(format!(
            "{} is already quantized",
            path.display()
        ))),
    }
}

fn cmd_quantize(g: &Global, model: &Path, calibration: Option<&Path>, on_train: bool) -> Result<()> {
    let full = load_full(model)?;
    let samples = match (calibration, on_train) {
        (Some(path), _) => Some(data::parse_feature_rows(File::open(path)?, full.input_dim())?),
        (None, true) => Some(splits(g, full.input_dim(), full.output_dim())?.0.features().to_vec()),
        (None, false) => None,
    };
    let q = quantize_model(&full, &QuantizeOptions::default(), samples.as_deref())?;
    let out = g.out.clone().unwrap_or_else(|| model.with_extension("q.bin"));
    println!("input exponent {}", q.input_params().exponent());
    for (l, layer) in q.layers().iter().enumerate() {
        println!(
            "layer {l}: {}x{} {} weight exponent {} pre-activation exponent {} activation exponent {}",
            layer.out_dim(),
            layer.in_dim(),
            layer.activation(),
            layer.weight_params().exponent(),
            layer.preact_params().exponent(),
            layer.act_params().exponent()
        );
    }
    save_model(&Model::Quantized(q), &out)?;
    println!("model: {}", out.display());
    Ok(())
}

fn cmd_finetune(g: &Global, model: Option<&Path>, curves: Option<&Path>, error_feedback: bool) -> Result<()> {
    let mut m = match model {
        Some(path) => load_model(path)?,
        None => {
            let full = build_model(&arch_for(g).into(), g.seed)?;
            Model::Quantized(quantize_model(&full, &QuantizeOptions::default(), None)?)
        }
    };
    let (train_ds, val_ds) = splits(g, m.input_dim(), m.output_dim())?;
    let cfg = train_config(g, TrainConfig::finetune(g.epochs.unwrap_or(50)), error_feedback);
    let outcome = with_progress("finetune", |cb| train::finetune(&mut m, &train_ds, &val_ds, &cfg, cb))?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("finetuned.bin"));
    let curves = curves_path(&out, curves);
    save_model(&m, &out)?;
    write_curves(&curves, &outcome.records)?;
    summarize("fine-tuned", &outcome.records);
    println!("model: {}", out.display());
    println!("curves: {}", curves.display());
    Ok(())
}

fn cmd_eval(g: &Global, model: &Path, on: Side, json: bool) -> Result<()> {
    let m = load_model(model)?;
    let ds = match on {
        Side::All => {
            let ds = load_dataset(g, m.input_dim(), m.output_dim())?;
            if ds.is_normalized() {
                ds
            } else {
                normalize_all(&ds)
            }
        }
        Side::Train => splits(g, m.input_dim(), m.output_dim())?.0,
        Side::Validation => splits(g, m.input_dim(), m.output_dim())?.1,
    };
    let metrics = evaluate(&m, &ds, g.activation_math)?;
    if json {
        println!("{}", metrics.to_json());
    } else {
        print!("{metrics}");
    }
    Ok(())
}

/// Min/max fitted on every row, for evaluating a whole raw dataset.
fn normalize_all(ds: &Dataset) -> Dataset {
    let norm = data::Normalization::fit(ds.features(), ds.n_features());
    let features = ds
        .features()
        .chunks_exact(ds.n_features())
        .flat_map(|row| row.iter().enumerate().map(|(k, &v)| norm.apply(k, v)).collect::<Vec<_>>())
        .collect();
    Dataset::from_labels(
        features,
        ds.n_features(),
        ds.labels().to_vec(),
        ds.class_names().to_vec(),
        Some(norm),
    )
    .expect("same shape as the source")
}

fn cmd_report_memory(g: &Global, model: Option<&Path>, quantized: Option<&Path>, json: bool) -> Result<()> {
    let full = match model {
        Some(path) => load_model(path)?,
        None => Model::Full(build_model(&arch_for(g).into(), g.seed)?),
    };
    let q = match (quantized, &full) {
        (Some(path), _) => load_model(path)?,
        (None, Model::Full(f)) => Model::Quantized(quantize_model(f, &QuantizeOptions::default(), None)?),
        (None, Model::Quantized(_)) => {
            return Err(Error::Config(
                "--model must be a float model when --quantized is not given".into(),
            ))
        }
    };
    let report = memory_report(&full, &q)?;
    if json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        print!("{report}");
    }
    Ok(())
}

fn cmd_bench(g: &Global, model: Option<&Path>, reps: usize) -> Result<()> {
    let full = match model {
        Some(path) => load_full(path)?,
        None => build_model(&arch_for(g).into(), g.seed)?,
    };
    let q = quantize_model(&full, &QuantizeOptions::default(), None)?;
    let (train_ds, _) = splits(g, full.input_dim(), full.output_dim())?;
    let lr = g.lr.unwrap_or(train::DEFAULT_LEARNING_RATE);
    let float = bench_per_sample(&Model::Full(full), &train_ds, reps, lr, g.activation_math)?;
    let int8 = bench_per_sample(&Model::Quantized(q), &train_ds, reps, lr, g.activation_math)?;
    println!("float: {float}");
    println!("int8:  {int8}");
    println!(
        "float/int8 time ratio: {:.2} (host timing, informational only)",
        float.mean_us / int8.mean_us
    );
    Ok(())
}

fn cmd_curves(g: &Global, input: &Path, sparkline: bool) -> Result<()> {
    let records = train::read_curve_csv(File::open(input)?)?;
    match &g.out {
        Some(out) => write_curves(out, &records)?,
        None => {
            let stdout = io::stdout();
            train::write_curve_csv(&records, stdout.lock())?;
        }
    }
    if sparkline {
        let summary = sparkline_summary(&records);
        if g.out.is_some() {
            print!("{summary}");
        } else {
            eprint!("{summary}");
        }
    }
    Ok(())
}

/// One bar per value, or per bucket mean when there are more than 50 values.
fn sparkline(values: &[f64]) -> String {
    const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];
    const WIDTH: usize = 50;
    let bucketed: Vec<f64>;
    let values = if values.len() > WIDTH {
        bucketed = (0..WIDTH)
            .map(|b| {
                let chunk = &values[b * values.len() / WIDTH..(b + 1) * values.len() / WIDTH];
                chunk.iter().sum::<f64>() / chunk.len() as f64
            })
            .collect();
        &bucketed[..]
    } else {
        values
    };
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            BARS[((t * 7.0).round() as usize).min(7)]
        })
        .collect()
}

fn sparkline_summary(records: &[EpochRecord]) -> String {
    if records.is_empty() {
        return "no epochs\n".into();
    }
    let mut out = String::new();
    let series: [(&str, fn(&EpochRecord) -> f64); 3] = [
        ("train_acc ", |r| r.train_acc),
        ("val_acc   ", |r| r.val_acc),
        ("train_loss", |r| r.train_loss),
    ];
    for (name, get) in series {
        let values: Vec<f64> = records.iter().map(get).collect();
        out.push_str(&format!(
            "{name} {} first {:.4} last {:.4}\n",
            sparkline(&values),
            values[0],
            values[values.len() - 1]
        ));
    }
    out
}
