//! End-to-end checks of the CLI surface: every subcommand on a small
//! synthetic dataset, exit codes, and the on-disk artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recoverbench"))
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rb_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ok(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn generate(dir: &Path, out: &str) -> PathBuf {
    let epd = dir.join(out);
    let output = bin()
        .args([
            "generate",
            "--out",
            epd.to_str().unwrap(),
            "--trials-a",
            "14",
            "--trials-b",
            "14",
            "--channels",
            "5",
            "--time",
            "100",
            "--ar",
            "0.5",
            "--spatial-corr",
            "0.1",
            "--seed",
            "21",
        ])
        .output()
        .unwrap();
    ok(&output);
    epd
}

#[test]
fn generate_inject_univariate_train_roundtrip() {
    let dir = work_dir("pipeline");
    let base = generate(&dir, "base");
    assert!(base.join("meta.json").exists());
    assert!(base.join("data.f64").exists());

    let inj = dir.join("inj");
    let output = bin()
        .args([
            "inject",
            "--input",
            base.to_str().unwrap(),
            "--out",
            inj.to_str().unwrap(),
            "--snr",
            "6",
            "--channels",
            "2",
            "--fwhm",
            "40",
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    ok(&output);
    assert!(inj.join("truth.json").exists());
    assert!(inj.join("x_in.f64").exists());

    let uni_csv = dir.join("uni.csv");
    let output = bin()
        .args([
            "univariate",
            "--input",
            inj.to_str().unwrap(),
            "--truth",
            inj.to_str().unwrap(),
            "--n-perm",
            "300",
            "--out",
            uni_csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let stdout = ok(&output);
    assert!(stdout.contains("tp_rate"), "{stdout}");
    let csv = std::fs::read_to_string(&uni_csv).unwrap();
    assert!(csv.starts_with("channel_id,stat,p,significant\n"), "{csv}");
    assert_eq!(csv.lines().count(), 6); // header + 5 channels

    let report = dir.join("svm.json");
    let output = bin()
        .args([
            "train",
            "--input",
            inj.to_str().unwrap(),
            "--method",
            "svm",
            "--truth",
            inj.to_str().unwrap(),
            "--k-outer",
            "4",
            "--k-inner",
            "2",
            "--c-grid",
            "0.1,10",
            "--out",
            report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let stdout = ok(&output);
    assert!(stdout.contains("balanced accuracy"), "{stdout}");
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert!(report_text.contains("\"balanced_accuracy\""));

    std::fs::remove_dir_all(&dir).unwrap();
}

fn grid_config(dir: &Path) -> PathBuf {
    let out_dir = dir.join("gridout");
    let config = serde_json::json!({
        "dataset": {"generate": {
            "n_trials_a": 12, "n_trials_b": 12, "n_channels": 4, "n_time": 80,
            "sampling_rate": 1000.0, "ar_coefficient": 0.4,
            "spatial_correlation": 0.1, "trial_jitter_sd": 0.05, "seed": 17
        }},
        "snr_values": [2.0, 6.0],
        "sparsity_channels": [2, 4],
        "methods": ["univariate", "svm", "mkl"],
        "n_perm_univariate": 200,
        "n_perm_model": 0,
        "c_grid": [0.1, 10.0],
        "k_outer": 4,
        "k_inner": 2,
        "gaussian_fwhm_ms": 30.0,
        "master_seed": 7,
        "output_dir": out_dir,
        "threads": 2
    });
    let path = dir.join("grid.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn grid_report_summarize_flow() {
    let dir = work_dir("grid");
    let config = grid_config(&dir);
    let output = bin()
        .args(["grid", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&output);

    let results = dir.join("gridout").join("results.csv");
    let text = std::fs::read_to_string(&results).unwrap();
    assert!(text.starts_with(
        "snr,n_signal_channels,s_in,method,balanced_accuracy,p_value,cosine_feature,"
    ));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);

    // SVG report parses as XML
    let svg_path = dir.join("acc.svg");
    let output = bin()
        .args([
            "report",
            "--results",
            results.to_str().unwrap(),
            "--metric",
            "balanced_accuracy",
            "--method",
            "mkl",
            "--format",
            "svg",
            "--out",
            svg_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&output);
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    roxmltree::Document::parse(&svg).expect("well-formed SVG");

    // CSV matrix report
    let matrix_path = dir.join("tp.csv");
    let output = bin()
        .args([
            "report",
            "--results",
            results.to_str().unwrap(),
            "--metric",
            "tp_adaptive",
            "--method",
            "univariate",
            "--format",
            "csv",
            "--out",
            matrix_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    ok(&output);
    let matrix = std::fs::read_to_string(&matrix_path).unwrap();
    assert!(matrix.starts_with("snr,2,4\n"), "{matrix}");

    let output = bin()
        .args(["summarize", "--results", results.to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = ok(&output);
    assert!(stdout.contains("univariate"), "{stdout}");
    assert!(stdout.contains("svm"));
    assert!(stdout.contains("mkl"));

    let output = bin()
        .args([
            "summarize",
            "--results",
            results.to_str().unwrap(),
            "--json",
        ])
        .output()
        .unwrap();
    let stdout = ok(&output);
    serde_json::from_str::<serde_json::Value>(&stdout).expect("valid summary JSON");

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_errors_exit_one() {
    let dir = work_dir("badconfig");
    let path = dir.join("bad.json");
    std::fs::write(&path, "{\"dataset\": {\"path\": \"/nonexistent\"}").unwrap();
    let output = bin()
        .args(["grid", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());

    // empty snr list is a validation error
    let config = serde_json::json!({
        "dataset": {"generate": {
            "n_trials_a": 4, "n_trials_b": 4, "n_channels": 2, "n_time": 20,
            "sampling_rate": 1000.0, "ar_coefficient": 0.0,
            "spatial_correlation": 0.0, "trial_jitter_sd": 0.0, "seed": 0
        }},
        "snr_values": [],
        "master_seed": 0,
        "output_dir": dir.join("out")
    });
    std::fs::write(&path, config.to_string()).unwrap();
    let output = bin()
        .args(["grid", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("snr_values"), "{stderr}");

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unknown_metric_exits_one() {
    let dir = work_dir("badmetric");
    let config = grid_config(&dir);
    ok(&bin()
        .args(["grid", "--config", config.to_str().unwrap()])
        .output()
        .unwrap());
    let results = dir.join("gridout").join("results.csv");
    let output = bin()
        .args([
            "report",
            "--results",
            results.to_str().unwrap(),
            "--metric",
            "nonsense",
            "--method",
            "svm",
            "--format",
            "svg",
            "--out",
            dir.join("x.svg").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown metric"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn cell_failures_exit_two_and_record_error_codes() {
    let dir = work_dir("partial");
    let out_dir = dir.join("out");
    // k_outer exceeds the per-class trial count: every ML cell fails while
    // the univariate rows still succeed
    let config = serde_json::json!({
        "dataset": {"generate": {
            "n_trials_a": 6, "n_trials_b": 6, "n_channels": 3, "n_time": 40,
            "sampling_rate": 1000.0, "ar_coefficient": 0.3,
            "spatial_correlation": 0.0, "trial_jitter_sd": 0.0, "seed": 2
        }},
        "snr_values": [4.0],
        "sparsity_channels": [2],
        "methods": ["univariate", "svm"],
        "n_perm_univariate": 100,
        "k_outer": 10,
        "k_inner": 2,
        "master_seed": 3,
        "output_dir": out_dir
    });
    let path = dir.join("grid.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let output = bin().args(["grid", "--config", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", String::from_utf8_lossy(&output.stderr));
    let text = std::fs::read_to_string(dir.join("out").join("results.csv")).unwrap();
    let svm_row = text.lines().find(|l| l.contains(",svm,")).unwrap();
    assert!(svm_row.ends_with(",validation"), "{svm_row}");
    let uni_row = text.lines().find(|l| l.contains(",univariate,")).unwrap();
    assert!(uni_row.ends_with(','), "{uni_row}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn thread_env_var_is_honored() {
    let dir = work_dir("threads");
    let config_path = dir.join("grid.json");
    let out_dir = dir.join("out");
    let config = serde_json::json!({
        "dataset": {"generate": {
            "n_trials_a": 10, "n_trials_b": 10, "n_channels": 3, "n_time": 50,
            "sampling_rate": 1000.0, "ar_coefficient": 0.3,
            "spatial_correlation": 0.0, "trial_jitter_sd": 0.0, "seed": 3
        }},
        "snr_values": [4.0],
        "sparsity_channels": [2],
        "methods": ["univariate"],
        "n_perm_univariate": 100,
        "k_outer": 3,
        "k_inner": 2,
        "master_seed": 1,
        "output_dir": out_dir
    });
    std::fs::write(&config_path, config.to_string()).unwrap();
    let output = bin()
        .env("RECOVERBENCH_THREADS", "1")
        .args(["grid", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&output);
    assert!(dir.join("out").join("results.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}
