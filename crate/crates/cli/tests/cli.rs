use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mattevit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mattevit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    lines[0].to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "synthetic_pairs": 2,
  "image_size": 32,
  "batch_size": 2,
  "matte": { "batch_size": 2, "lr": 0.0001 },
  "lambda_sweep": [0.05, 0.1]
}"#;

#[test]
fn full_file_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let config = root.join("small.json");
    fs::write(&config, SMALL).unwrap();

    let stdout = ok(&mattevit(&["synth-data", "--out", s(&data), "--count", "3", "--size", "32", "--seed", "1"]));
    assert!(stdout.contains("wrote 3 pairs"));
    assert_eq!(fs::read_dir(data.join("shadow")).unwrap().count(), 3);

    ok(&mattevit(&["matte-build", "--pairs", s(&data), "--out", s(&data.join("matte"))]));
    assert_eq!(fs::read_dir(data.join("matte")).unwrap().count(), 3);

    let runs = root.join("runs");
    let common = ["--config", s(&config), "--data", s(&data), "--out", s(&runs), "--max-steps", "2"];
    let matte_ckpt = ok(&mattevit(&[&["train-matte"][..], &common].concat())).trim().to_string();
    assert!(Path::new(&matte_ckpt).is_file());
    let log = fs::read_to_string(runs.join("matte_generator/loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");

    let removal = ok(&mattevit(&[&["train-removal"][..], &common, &["--matte-ckpt", &matte_ckpt]].concat()))
        .trim()
        .to_string();
    let log = fs::read_to_string(runs.join("removal/loss.csv")).unwrap();
    assert!(log.starts_with("step,l_char,l_fft,l_total\n"));
    assert_eq!(log.lines().count(), 3);

    let pred = root.join("pred");
    let written = ok(&mattevit(&["infer", "--checkpoint", &removal, "--input", s(&data.join("shadow")), "--out", s(&pred)]));
    assert_eq!(written.lines().count(), 3);

    let csv = root.join("metrics.csv");
    let report = ok(&mattevit(&["eval", "--pred", s(&pred), "--gt", s(&data.join("shadow_free")), "--out", s(&csv)]));
    assert!(report.starts_with("image,psnr_db,ssim,rmse,edit_distance\n"));
    assert_eq!(fs::read_to_string(&csv).unwrap(), report);

    // guidance mismatch at inference is a config error
    let line = error_line(&mattevit(&[
        "infer", "--checkpoint", &removal, "--input", s(&data.join("shadow")), "--out", s(&pred), "--guidance", "none",
    ]));
    assert!(line.starts_with("error[config]"), "{line}");
}

#[test]
fn sweep_and_ablation_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.json");
    fs::write(&config, SMALL).unwrap();
    let out = tmp.path().join("out");
    let common = ["--config", s(&config), "--out", s(&out), "--max-steps", "1"];

    let sweep = ok(&mattevit(&[&["sweep-lambda"][..], &common].concat()));
    assert_eq!(sweep.lines().count(), 3, "{sweep}");
    assert!(out.join("lambda_sweep.csv").is_file());
    let single = ok(&mattevit(&[&["sweep-lambda"][..], &common, &["--lambda", "0.5"]].concat()));
    assert_eq!(single.lines().count(), 2);
    assert!(single.lines().nth(1).unwrap().starts_with("0.5,"));

    let table = ok(&mattevit(&[&["ablation"][..], &common].concat()));
    assert_eq!(table.lines().count(), 7, "{table}");
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], f[3], "measured vs predicted parameter count: {line}");
    }
}

#[test]
fn flags_override_config_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.json");
    fs::write(&config, r#"{"image_size": 40, "synthetic_pairs": 1}"#).unwrap();
    let out = tmp.path().join("out");
    let line = error_line(&mattevit(&["train-matte", "--config", s(&config), "--out", s(&out), "--max-steps", "1"]));
    assert!(line.starts_with("error[config]") && line.contains("image_size"), "{line}");
    ok(&mattevit(&["train-matte", "--config", s(&config), "--out", s(&out), "--max-steps", "1", "--size", "32"]));
}

#[test]
fn errors_are_single_categorized_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.ckpt");
    let line = error_line(&mattevit(&["infer", "--checkpoint", s(&missing), "--input", ".", "--out", "x"]));
    assert!(line.starts_with("error[io]"), "{line}");

    let garbage = tmp.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint at all").unwrap();
    let line = error_line(&mattevit(&["infer", "--checkpoint", s(&garbage), "--input", ".", "--out", "x"]));
    assert!(line.starts_with("error[checkpoint]") || line.starts_with("error[format]"), "{line}");

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let line = error_line(&mattevit(&["eval", "--pred", s(&empty), "--gt", s(&empty)]));
    assert!(line.starts_with("error[config]"), "{line}");

    assert!(!mattevit(&["train-removal", "--guidance", "sideways"]).status.success());
}

#[test]
fn gradcheck_passes() {
    let out = ok(&mattevit(&["gradcheck", "--seed", "3"]));
    assert!(out.lines().count() > 40);
    assert!(out.lines().all(|l| l.ends_with(" ok")), "{out}");
}

#[test]
fn ocr_eval_reports_edit_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let (gt, pred) = (tmp.path().join("gt"), tmp.path().join("pred"));
    fs::create_dir(&gt).unwrap();
    fs::create_dir(&pred).unwrap();
    fs::write(gt.join("a.txt"), "kitten").unwrap();
    fs::write(pred.join("a.txt"), "sitting").unwrap();
    fs::write(gt.join("b.txt"), "same").unwrap();
    fs::write(pred.join("b.txt"), "same").unwrap();
    let out = ok(&mattevit(&["ocr-eval", "--gt", s(&gt), "--pred", s(&pred)]));
    assert!(out.lines().any(|l| l.starts_with("a,") && l.ends_with(",3")), "{out}");
    assert!(out.lines().any(|l| l.starts_with("mean,") && l.ends_with(",1.5")), "{out}");
}
