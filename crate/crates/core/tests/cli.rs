use std::path::Path;
use std::process::{Command, Output};

use lsgd::nn::{load_model, Model};

fn lsgd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsgd"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_quantize_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lsgd(d, &["train", "--epochs", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("model.bin").exists());
    let curves = std::fs::read_to_string(d.join("model.curves.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("epoch,train_acc,val_acc,train_loss"));
    assert_eq!(curves.lines().count(), 4);

    let o = lsgd(d, &["quantize", "--model", "model.bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(matches!(load_model(d.join("model.q.bin")).unwrap(), Model::Quantized(_)));

    let o = lsgd(d, &["eval", "--model", "model.q.bin", "--seed", "2"]);
    assert!(o.status.success());
    let table = stdout(&o);
    for metric in ["precision", "recall", "f1", "accuracy", "macro-averaged"] {
        assert!(table.contains(metric), "{table}");
    }

    // eval accuracy agrees with the last curve row
    let o = lsgd(d, &["eval", "--model", "model.bin", "--seed", "2", "--json"]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let last = curves.lines().last().unwrap();
    let val_acc: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(json["accuracy"].as_f64().unwrap(), val_acc);
    assert_eq!(json["confusion"].as_array().unwrap().len(), 4);
}

#[test]
fn finetune_requires_quantized_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(lsgd(d, &["train", "--epochs", "1"]).status.success());
    let o = lsgd(d, &["finetune", "--model", "model.bin", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:"), "{}", stderr(&o));
}

#[test]
fn random_init_finetune_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = lsgd(dir.path(), &["finetune", "--epochs", "1"]);
    assert!(o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("warning: "), "{err}");
    assert!(err.contains("pretrained"), "{err}");

    // a quantized checkpoint of a trained model does not warn
    let d = dir.path();
    assert!(lsgd(d, &["train", "--epochs", "1"]).status.success());
    assert!(lsgd(d, &["quantize", "--model", "model.bin"]).status.success());
    let o = lsgd(d, &["finetune", "--model", "model.q.bin", "--epochs", "1"]);
    assert!(o.status.success());
    assert!(!stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn exit_codes_and_error_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let o = lsgd(d, &["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]:"));

    let o = lsgd(d, &["train", "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:"));

    let o = lsgd(d, &["train", "--shuffle", "--no-shuffle"]);
    assert_eq!(o.status.code(), Some(2));

    let o = lsgd(d, &["train", "--arch", "resnet"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(d.join("junk.bin"), b"DCV1\x01\x00").unwrap();
    let o = lsgd(d, &["eval", "--model", "junk.bin"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error[format]:") && err.contains("byte 6"), "{err}");
    assert_eq!(err.lines().count(), 1);

    std::fs::write(d.join("bad.csv"), "low,low,2,2,small,low,acc\nlow,cheap,2,2,small,low,acc\n").unwrap();
    let o = lsgd(d, &["train", "--dataset", "bad.csv", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error[parse]:") && err.contains("row 2, column 2"), "{err}");

    let o = lsgd(d, &["eval", "--model", "missing.bin"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]:"));

    let o = lsgd(d, &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("macro-averaged"));
}

#[test]
fn numeric_csv_dataset_with_cogdist_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::new();
    for i in 0..200 {
        let label = i % 2;
        let base = if label == 1 { 5.0 } else { -5.0 };
        let row: Vec<String> = (0..6).map(|k| format!("{}", base + ((i * 7 + k) % 5) as f64)).collect();
        text.push_str(&format!("{},{label}\n", row.join(",")));
    }
    std::fs::write(d.join("cog.csv"), text).unwrap();
    let o = lsgd(d, &["train", "--arch", "cogdist", "--dataset", "cog.csv", "--epochs", "20", "--lr", "0.05"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = lsgd(d, &["eval", "--model", "model.bin", "--dataset", "cog.csv", "--json"]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["accuracy"].as_f64(), Some(1.0));
    assert_eq!(json["averaging"].as_str(), Some("binary"));
}

#[test]
fn quantize_with_calibration_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(lsgd(d, &["train", "--epochs", "1"]).status.success());
    // 0.5 does not fit 127 * 2^-8, so the input exponent is -7
    std::fs::write(d.join("cal.csv"), "0.5,0.5,0.5,0.5,0.5,0.5\n-0.25,0,0,0,0,0.25\n").unwrap();
    let o = lsgd(d, &["quantize", "--model", "model.bin", "--calibration", "cal.csv", "--out", "cal.q.bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    match load_model(d.join("cal.q.bin")).unwrap() {
        Model::Quantized(q) => assert_eq!(q.input_params().exponent(), -7),
        Model::Full(_) => panic!("expected a quantized model"),
    }
    let o = lsgd(d, &["quantize", "--model", "model.bin", "--calibrate-on-train", "--out", "t.q.bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn report_memory_bench_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lsgd(d, &["report-memory", "--arch", "cogdist"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("2.49") && text.contains("3.52"), "{text}");

    let o = lsgd(d, &["report-memory", "--json"]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["full"]["weights"].as_u64(), Some(3072));
    assert_eq!(json["quantized"]["biases"].as_u64(), Some(208));

    let o = lsgd(d, &["bench", "--reps", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("informational"));

    assert!(lsgd(d, &["train", "--epochs", "4"]).status.success());
    let o = lsgd(d, &["curves", "--input", "model.curves.csv"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), std::fs::read_to_string(d.join("model.curves.csv")).unwrap());
    let o = lsgd(d, &["curves", "--input", "model.curves.csv", "--sparkline", "--out", "copy.csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("train_acc "));
    assert_eq!(stdout(&o).lines().count(), 3);
}
