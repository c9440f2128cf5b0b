//! End-to-end tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn plbf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plbf"))
}

fn run(args: &[&str]) -> Output {
    plbf().args(args).output().expect("binary runs")
}

fn assert_code(output: &Output, expected: i32) {
    assert_eq!(
        output.status.code(),
        Some(expected),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn synth_scores(dir: &Path, keys: usize, nonkeys: usize) -> PathBuf {
    let path = dir.join("scores.csv");
    let output = run(&[
        "synth",
        "--skew",
        "1.5",
        "--keys",
        &keys.to_string(),
        "--nonkeys",
        &nonkeys.to_string(),
        "--segments",
        "50",
        "--seed",
        "7",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    path
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let output = run(&[
            "synth",
            "--keys",
            "500",
            "--nonkeys",
            "400",
            "--segments",
            "20",
            "--seed",
            "11",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_code(&output, 0);
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("500 keys"), "{stdout}");
        assert!(stdout.contains("divergence"), "{stdout}");
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    assert_eq!(
        bytes_a.iter().filter(|&&c| c == b'\n').count(),
        901, // header + 900 rows
    );
}

#[test]
fn build_single_region_matches_plain_filter_sizing() {
    let dir = tempfile::tempdir().unwrap();
    let scores = synth_scores(dir.path(), 4000, 4000);
    let filter_path = dir.path().join("filter.plbf");
    let output = run(&[
        "build",
        "--scores",
        scores.to_str().unwrap(),
        "--target-fpr",
        "0.01",
        "--regions",
        "1",
        "--segments",
        "50",
        "--out",
        filter_path.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let summary: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("summary is JSON");
    // One region at the overall budget: the standard construction for all
    // keys, ceil(log2(e) * 4000 * log2(100)) bits.
    let expected = (std::f64::consts::LOG2_E * 4000.0 * 100f64.log2()).ceil() as u64;
    assert_eq!(summary["physical_bits"].as_u64().unwrap(), expected);
    assert_eq!(summary["n_keys"].as_u64().unwrap(), 4000);
    assert!(filter_path.exists());
}

#[test]
fn build_then_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scores = synth_scores(dir.path(), 3000, 3000);
    let filter_path = dir.path().join("filter.plbf");
    let output = run(&[
        "build",
        "--scores",
        scores.to_str().unwrap(),
        "--target-fpr",
        "0.01",
        "--regions",
        "3",
        "--segments",
        "50",
        "--out",
        filter_path.to_str().unwrap(),
    ]);
    assert_code(&output, 0);

    // Pull a real key row out of the score file and query it back.
    let content = std::fs::read_to_string(&scores).unwrap();
    let key_row = content
        .lines()
        .find(|l| l.ends_with(",key"))
        .unwrap()
        .to_string();
    let mut fields = key_row.split(',');
    let (id, score) = (fields.next().unwrap(), fields.next().unwrap());

    let positive = run(&[
        "query",
        "--filter",
        filter_path.to_str().unwrap(),
        "--element",
        id,
        "--score",
        score,
    ]);
    assert_code(&positive, 0);
    assert_eq!(String::from_utf8_lossy(&positive.stdout).trim(), "positive");

    // An element that was never inserted, scored into a dense low region,
    // comes back negative with exit code 1.
    let negative = run(&[
        "query",
        "--filter",
        filter_path.to_str().unwrap(),
        "--element",
        "definitely-not-a-key",
        "--score",
        "0.01",
    ]);
    assert_code(&negative, 1);
    assert_eq!(String::from_utf8_lossy(&negative.stdout).trim(), "negative");
}

#[test]
fn query_error_paths_use_reserved_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let scores = synth_scores(dir.path(), 1000, 1000);
    let filter_path = dir.path().join("filter.plbf");
    assert_code(
        &run(&[
            "build",
            "--scores",
            scores.to_str().unwrap(),
            "--target-fpr",
            "0.05",
            "--segments",
            "50",
            "--regions",
            "2",
            "--out",
            filter_path.to_str().unwrap(),
        ]),
        0,
    );

    // Score outside [0, 1]: validation error.
    let bad_score = run(&[
        "query",
        "--filter",
        filter_path.to_str().unwrap(),
        "--element",
        "x",
        "--score",
        "1.5",
    ]);
    assert_code(&bad_score, 2);

    // Missing filter file: I/O error.
    let missing = run(&[
        "query",
        "--filter",
        dir.path().join("nope.plbf").to_str().unwrap(),
        "--element",
        "x",
        "--score",
        "0.5",
    ]);
    assert_code(&missing, 3);

    // Corrupted filter file: validation error.
    let mut bytes = std::fs::read(&filter_path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    let corrupt_path = dir.path().join("corrupt.plbf");
    std::fs::write(&corrupt_path, bytes).unwrap();
    let corrupt = run(&[
        "query",
        "--filter",
        corrupt_path.to_str().unwrap(),
        "--element",
        "x",
        "--score",
        "0.5",
    ]);
    assert_code(&corrupt, 2);

    // Unknown flag: usage error from the parser.
    let usage = run(&["query", "--no-such-flag"]);
    assert_code(&usage, 2);
}

#[test]
fn build_rejects_malformed_and_infeasible_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad_csv = dir.path().join("bad.csv");
    std::fs::write(&bad_csv, "id,score,label\nx,2.0,key\n").unwrap();
    let out = dir.path().join("f.plbf");
    let malformed = run(&[
        "build",
        "--scores",
        bad_csv.to_str().unwrap(),
        "--target-fpr",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&malformed, 2);

    let scores = synth_scores(dir.path(), 500, 500);
    let infeasible = run(&[
        "build",
        "--scores",
        scores.to_str().unwrap(),
        "--target-fpr",
        "1.0",
        "--segments",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&infeasible, 2);

    let unreadable = run(&[
        "build",
        "--scores",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--target-fpr",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&unreadable, 3);
}

#[test]
fn sweep_emits_expected_columns_and_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let scores = synth_scores(dir.path(), 4000, 4000);
    let out = dir.path().join("sweep.csv");
    let output = run(&[
        "sweep",
        "--scores",
        scores.to_str().unwrap(),
        "--target-fprs",
        "0.05,0.01",
        "--regions",
        "3",
        "--segments",
        "50",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&output, 0);

    let content = std::fs::read_to_string(&out).unwrap();
    let mut lines = content.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,target_f,total_bits,kib,measured_fpr,ci_low,ci_high,divergence_bits,k,N,seed"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8); // 4 methods x 2 targets

    let field = |row: &str, idx: usize| -> f64 {
        row.split(',').nth(idx).unwrap().parse().unwrap()
    };
    for f in ["0.05", "0.01"] {
        let standard = rows
            .iter()
            .find(|r| r.starts_with("standard_bf") && r.contains(&format!(",{f},")))
            .unwrap();
        let optimal = rows
            .iter()
            .find(|r| r.starts_with("optimal_bf_accounting") && r.contains(&format!(",{f},")))
            .unwrap();
        let ratio = field(standard, 2) / field(optimal, 2);
        assert!((ratio - std::f64::consts::LOG2_E).abs() < 1e-9);
    }

    // Same invocation, same bytes.
    let out2 = dir.path().join("sweep2.csv");
    let rerun = run(&[
        "sweep",
        "--scores",
        scores.to_str().unwrap(),
        "--target-fprs",
        "0.05,0.01",
        "--regions",
        "3",
        "--segments",
        "50",
        "--seed",
        "5",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_code(&rerun, 0);
    assert_eq!(
        std::fs::read(&out).unwrap(),
        std::fs::read(&out2).unwrap()
    );
}

#[test]
fn sweep_json_format_and_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let scores = synth_scores(dir.path(), 2000, 2000);
    let output = run(&[
        "sweep",
        "--scores",
        scores.to_str().unwrap(),
        "--target-fprs",
        "0.05",
        "--methods",
        "plbf",
        "--regions",
        "3",
        "--segments",
        "50",
        "--format",
        "json",
    ]);
    assert_code(&output, 0);
    let rows: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["method"], "plbf");
    assert_eq!(rows[0]["N"], 50);
    assert!(rows[0]["measured_fpr"].as_f64().unwrap() <= 0.08);
}

#[test]
fn regions_sweep_includes_reference_row() {
    let dir = tempfile::tempdir().unwrap();
    let scores = synth_scores(dir.path(), 3000, 3000);
    let output = run(&[
        "regions-sweep",
        "--scores",
        scores.to_str().unwrap(),
        "--target-fpr",
        "0.01",
        "--k-list",
        "1,2,4",
        "--segments",
        "50",
    ]);
    assert_code(&output, 0);
    let content = String::from_utf8_lossy(&output.stdout);
    let mut lines = content.lines();
    assert_eq!(lines.next().unwrap(), "k,saved_bits,divergence");
    let ks: Vec<u32> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ks, vec![1, 2, 4, 25]);
}

#[test]
fn accepts_two_single_column_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let key_path = dir.path().join("keys.txt");
    let nonkey_path = dir.path().join("nonkeys.txt");
    let key_scores: Vec<String> = (0..800).map(|i| format!("{}", 0.3 + 0.7 * (i as f64 / 800.0))).collect();
    let nonkey_scores: Vec<String> = (0..800).map(|i| format!("{}", 0.7 * (i as f64 / 800.0))).collect();
    std::fs::write(&key_path, key_scores.join("\n")).unwrap();
    std::fs::write(&nonkey_path, nonkey_scores.join("\n")).unwrap();

    let filter_path = dir.path().join("filter.plbf");
    let output = run(&[
        "build",
        "--key-scores",
        key_path.to_str().unwrap(),
        "--nonkey-scores",
        nonkey_path.to_str().unwrap(),
        "--target-fpr",
        "0.05",
        "--regions",
        "2",
        "--segments",
        "20",
        "--out",
        filter_path.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let summary: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(summary["n_keys"].as_u64().unwrap(), 800);
}
