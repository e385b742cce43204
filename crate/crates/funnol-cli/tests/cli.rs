//! End-to-end tests of the command-line surface: file outputs, exit codes
//! and rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn funnol() -> Command {
    Command::new(env!("CARGO_BIN_EXE_funnol"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    funnol()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn funnol")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Two-class sinusoid fixture, one file per channel.
fn write_fixture(dir: &Path, channels: usize) -> Vec<PathBuf> {
    let n = 16;
    let j = 12;
    let mut paths = Vec::new();
    for ch in 0..channels {
        let mut text = String::new();
        for i in 0..n {
            let label = 1 + i % 2;
            text.push_str(&label.to_string());
            for t in 0..j {
                let x = t as f64 / (j - 1) as f64;
                let freq = 2.0 * std::f64::consts::PI * (ch + 1) as f64;
                let mean = if label == 1 {
                    (freq * x).sin()
                } else {
                    (freq * x).cos()
                };
                // Deterministic pseudo-noise so rows are distinct.
                let wobble = ((i * 31 + t * 7 + ch * 3) % 13) as f64 / 13.0 * 0.1;
                text.push_str(&format!("\t{}", mean + wobble));
            }
            text.push('\n');
        }
        let path = dir.join(format!("fixture_ch{ch}.tsv"));
        fs::write(&path, text).unwrap();
        paths.push(path);
    }
    paths
}

#[test]
fn train_writes_checkpoint_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    let out = run(
        &[
            "train",
            "--data",
            data[0].to_str().unwrap(),
            "--out-dir",
            "run",
            "--epochs",
            "1",
            "--latent-dim",
            "2",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert!(dir.path().join("run/checkpoint.json").exists());
    let report = fs::read_to_string(dir.path().join("run/report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 2); // header + one epoch
    assert_eq!(lines[0], "epoch,loss,loss_c,loss_r,grad_norm,clipped");
}

#[test]
fn zero_learning_rate_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    let base = [
        "--data",
        data[0].to_str().unwrap(),
        "--latent-dim",
        "2",
        "--seed",
        "11",
        "--lr",
        "0",
    ];
    let mut a = vec!["train", "--out-dir", "zero_epochs", "--epochs", "0"];
    a.extend_from_slice(&base);
    assert_success(&run(&a, dir.path()));
    let mut b = vec!["train", "--out-dir", "five_epochs", "--epochs", "5"];
    b.extend_from_slice(&base);
    assert_success(&run(&b, dir.path()));
    let frozen = fs::read(dir.path().join("five_epochs/checkpoint.json")).unwrap();
    let init = fs::read(dir.path().join("zero_epochs/checkpoint.json")).unwrap();
    assert_eq!(frozen, init);
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 2);
    for out_dir in ["a", "b"] {
        let out = run(
            &[
                "train",
                "--data",
                data[0].to_str().unwrap(),
                "--data",
                data[1].to_str().unwrap(),
                "--out-dir",
                out_dir,
                "--epochs",
                "4",
                "--latent-dim",
                "3",
                "--seed",
                "21",
                "--corruption",
                "on",
            ],
            dir.path(),
        );
        assert_success(&out);
    }
    assert_eq!(
        fs::read(dir.path().join("a/checkpoint.json")).unwrap(),
        fs::read(dir.path().join("b/checkpoint.json")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("a/report.csv")).unwrap(),
        fs::read(dir.path().join("b/report.csv")).unwrap()
    );
}

#[test]
fn encode_reconstruct_classify_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    assert_success(&run(
        &[
            "train",
            "--data",
            data[0].to_str().unwrap(),
            "--out-dir",
            "run",
            "--epochs",
            "30",
            "--latent-dim",
            "2",
            "--seed",
            "5",
        ],
        dir.path(),
    ));
    let ckpt = "run/checkpoint.json";
    let data_arg = data[0].to_str().unwrap();

    let enc = run(
        &[
            "encode",
            "--checkpoint",
            ckpt,
            "--data",
            data_arg,
            "--out",
            "run/enc.csv",
        ],
        dir.path(),
    );
    assert_success(&enc);
    let enc_text = fs::read_to_string(dir.path().join("run/enc.csv")).unwrap();
    assert_eq!(enc_text.lines().count(), 17); // header + 16 samples
    assert!(enc_text.starts_with("z0,z1\n"));

    let rec = run(
        &[
            "reconstruct",
            "--checkpoint",
            ckpt,
            "--data",
            data_arg,
            "--out",
            "run/rec.csv",
        ],
        dir.path(),
    );
    assert_success(&rec);
    let stdout = String::from_utf8_lossy(&rec.stdout);
    let mse: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("masked_mse "))
        .expect("masked_mse line")
        .parse()
        .unwrap();
    assert!(mse.is_finite());

    let cls = run(
        &[
            "classify",
            "--checkpoint",
            ckpt,
            "--data",
            data_arg,
            "--out",
            "run/pred.csv",
        ],
        dir.path(),
    );
    assert_success(&cls);
    let pred_text = fs::read_to_string(dir.path().join("run/pred.csv")).unwrap();
    for line in pred_text.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        let prob_sum: f64 = fields[1..].iter().sum();
        assert!(
            (prob_sum - 1.0).abs() < 1e-9,
            "probabilities sum to {prob_sum}"
        );
    }
}

#[test]
fn encode_gives_identical_rows_for_identical_curves() {
    let dir = tempfile::tempdir().unwrap();
    // Two identical rows, two distinct ones.
    let mut text = String::new();
    for label in [1, 1, 2, 2] {
        text.push_str(&label.to_string());
        for t in 0..8 {
            text.push_str(&format!("\t{}", (t * label) as f64 * 0.1));
        }
        text.push('\n');
    }
    let data = dir.path().join("dup.tsv");
    fs::write(&data, text).unwrap();
    assert_success(&run(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out-dir",
            "run",
            "--epochs",
            "2",
            "--latent-dim",
            "2",
            "--seed",
            "2",
        ],
        dir.path(),
    ));
    assert_success(&run(
        &[
            "encode",
            "--checkpoint",
            "run/checkpoint.json",
            "--data",
            data.to_str().unwrap(),
            "--out",
            "run/enc.csv",
        ],
        dir.path(),
    ));
    let text = fs::read_to_string(dir.path().join("run/enc.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows[0], rows[1]);
    assert_ne!(rows[0], rows[2]);
}

#[test]
fn fpca_checkpoint_encodes_and_classify_rejects_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    let data_arg = data[0].to_str().unwrap();
    assert_success(&run(
        &["fpca", "--data", data_arg, "--out-dir", "run", "--k", "3"],
        dir.path(),
    ));
    assert_success(&run(
        &[
            "encode",
            "--checkpoint",
            "run/fpca.json",
            "--data",
            data_arg,
            "--out",
            "run/scores.csv",
        ],
        dir.path(),
    ));
    let text = fs::read_to_string(dir.path().join("run/scores.csv")).unwrap();
    assert!(text.starts_with("z0,z1,z2\n"));

    let cls = run(
        &[
            "classify",
            "--checkpoint",
            "run/fpca.json",
            "--data",
            data_arg,
            "--out",
            "run/p.csv",
        ],
        dir.path(),
    );
    assert_eq!(cls.status.code(), Some(1));
}

#[test]
fn protocol_single_split_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    assert_success(&run(
        &[
            "protocol",
            "--data",
            data[0].to_str().unwrap(),
            "--out-dir",
            "run",
            "--method",
            "fpca",
            "--splits",
            "1",
            "--k",
            "2",
            "--seed",
            "4",
        ],
        dir.path(),
    ));
    let csv = fs::read_to_string(dir.path().join("run/protocol_fpca.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("run/protocol_fpca.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["splits"], 1);
    assert_eq!(summary["se"], 0.0);
}

#[test]
fn sparsity_at_full_keep_reproduces_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    let data_arg = data[0].to_str().unwrap();
    let shared = [
        "--method", "fpca", "--splits", "2", "--k", "2", "--seed", "8",
    ];
    let mut protocol_args = vec!["protocol", "--data", data_arg, "--out-dir", "run"];
    protocol_args.extend_from_slice(&shared);
    assert_success(&run(&protocol_args, dir.path()));
    let mut sparsity_args = vec![
        "sparsity",
        "--data",
        data_arg,
        "--out-dir",
        "run",
        "--keep",
        "1.0",
    ];
    sparsity_args.extend_from_slice(&shared);
    assert_success(&run(&sparsity_args, dir.path()));
    let protocol_csv = fs::read_to_string(dir.path().join("run/protocol_fpca.csv")).unwrap();
    let sparsity_csv = fs::read_to_string(dir.path().join("run/sparsity_fpca_keep1.csv")).unwrap();
    assert_eq!(protocol_csv, sparsity_csv);
}

#[test]
fn report_renders_one_row_per_summary() {
    let dir = tempfile::tempdir().unwrap();
    for (i, method) in ["funnol_c", "funnol_nc", "fpca"].iter().enumerate() {
        let summary = serde_json::json!({
            "method": method,
            "mean": 0.8 + i as f64 * 0.05,
            "se": 0.01,
            "splits": 10,
            "keep_fraction": null,
        });
        fs::write(dir.path().join(format!("s{i}.json")), summary.to_string()).unwrap();
    }
    let out = run(&["report", "s0.json", "s1.json", "s2.json"], dir.path());
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("| ") && !l.contains("method"))
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains(".800(.010)"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"epochs": 1, "learning_rate_typo": 3}"#,
    )
    .unwrap();
    let out = run(
        &[
            "train",
            "--data",
            data[0].to_str().unwrap(),
            "--config",
            "cfg.json",
            "--out-dir",
            "run",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate_typo"));
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_fixture(dir.path(), 1);
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"epochs": 2, "latent_dim": 2, "seed": 7, "lr": 0.0}"#,
    )
    .unwrap();
    // Config alone: 2 epochs.
    assert_success(&run(
        &[
            "train",
            "--data",
            data[0].to_str().unwrap(),
            "--config",
            "cfg.json",
            "--out-dir",
            "a",
        ],
        dir.path(),
    ));
    let report = fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    // Flag overrides epochs.
    assert_success(&run(
        &[
            "train",
            "--data",
            data[0].to_str().unwrap(),
            "--config",
            "cfg.json",
            "--out-dir",
            "b",
            "--epochs",
            "5",
        ],
        dir.path(),
    ));
    let report = fs::read_to_string(dir.path().join("b/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 6);
}

#[test]
fn missing_input_file_exits_one_and_bad_flag_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["train", "--data", "no_such_file.tsv"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    let usage = run(&["train", "--no-such-flag"], dir.path());
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn checkpoint_dataset_dimension_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let one_channel = write_fixture(dir.path(), 1);
    let two_channels = write_fixture(dir.path(), 2);
    assert_success(&run(
        &[
            "train",
            "--data",
            one_channel[0].to_str().unwrap(),
            "--out-dir",
            "run",
            "--epochs",
            "1",
            "--latent-dim",
            "2",
        ],
        dir.path(),
    ));
    let out = run(
        &[
            "encode",
            "--checkpoint",
            "run/checkpoint.json",
            "--data",
            two_channels[0].to_str().unwrap(),
            "--data",
            two_channels[1].to_str().unwrap(),
            "--out",
            "run/enc.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("channels"));
}
