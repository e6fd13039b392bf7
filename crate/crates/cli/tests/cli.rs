//! End-to-end checks of the command-line surfaces: config handling and exit
//! codes, JSON-lines output, the derived subcommands, and CSV export.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use uha_cli::record::read_records;

fn uha() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uha"))
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn tiny_uha_config(out: &Path) -> serde_json::Value {
    serde_json::json!({
        "method": "uha",
        "target": {"kind": "student_t", "dim": 2, "nu": 3.0},
        "k": 4,
        "trainable": ["q", "eps", "eta"],
        "steps": 40,
        "batch_size": 4,
        "learning_rates": [0.005],
        "eval_draws": 400,
        "n_seeds": 2,
        "base_seed": 11,
        "init_plain_vi_steps": 40,
        "out": out
    })
}

fn run_ok(output: Output) -> String {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).to_string()
}

#[test]
fn optimize_writes_reproducible_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.jsonl");
    let config = write_config(dir.path(), "exp.json", tiny_uha_config(&out));

    let stdout = run_ok(uha().args(["optimize", "--config"]).arg(&config).output().unwrap());
    assert!(stdout.contains("uha k=4"), "{stdout}");

    let records = read_records(&out).unwrap();
    assert_eq!(records.len(), 3); // two seeds + summary
    assert_eq!(records[0].kind, "run");
    assert_eq!(records[2].kind, "summary");
    assert!(records[0].params_after.is_some());
    assert!(records[0].trace.as_ref().unwrap().len() == 40);
    assert_eq!(records[0].rng_algorithm, "splitmix64-counter/box-muller-v1");

    // Re-running appends records with identical headline numbers.
    run_ok(uha().args(["optimize", "--config"]).arg(&config).output().unwrap());
    let again = read_records(&out).unwrap();
    assert_eq!(again.len(), 6);
    let a = records[0].final_eval.unwrap();
    let b = again[3].final_eval.unwrap();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
}

#[test]
fn invalid_config_exits_with_code_two_and_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = tiny_uha_config(&dir.path().join("x.jsonl"));
    bad["k"] = 0.into();
    let config = write_config(dir.path(), "bad.json", bad);
    let output = uha().args(["optimize", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("k:"), "{stderr}");
}

#[test]
fn extrapolate_and_moments_run_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.jsonl");
    let config = write_config(dir.path(), "exp.json", tiny_uha_config(&out));
    run_ok(uha().args(["optimize", "--config"]).arg(&config).output().unwrap());

    let extra_out = dir.path().join("extra.jsonl");
    let stdout = run_ok(
        uha()
            .args(["extrapolate", "--k1", "8", "--eval-draws", "400", "--record"])
            .arg(&out)
            .arg("--out")
            .arg(&extra_out)
            .output()
            .unwrap(),
    );
    assert!(stdout.contains("K=4 -> K=8"), "{stdout}");
    let records = read_records(&extra_out).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].kind, "extrapolation");
    assert_eq!(records[0].k, 8);
    assert_eq!(
        records[0].params_after.as_ref().unwrap().raw_beta.len(),
        7
    );

    // Analytic moments of the Student-t target.
    let stdout = run_ok(
        uha()
            .args(["moments", "--samples", "2000", "--record"])
            .arg(&out)
            .output()
            .unwrap(),
    );
    assert!(stdout.contains("covariance-diagonal MAE"), "{stdout}");
}

#[test]
fn moments_refuses_corrupted_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.jsonl");
    let config = write_config(dir.path(), "exp.json", tiny_uha_config(&out));
    run_ok(uha().args(["optimize", "--config"]).arg(&config).output().unwrap());

    // Generate a (short) reference, then corrupt one entry.
    let reference = dir.path().join("ref.json");
    run_ok(
        uha()
            .args([
                "moments",
                "--generate-reference",
                "--hmc-steps",
                "2000",
                "--hmc-step-size",
                "0.5",
            ])
            .arg("--config")
            .arg(&config)
            .arg("--reference")
            .arg(&reference)
            .output()
            .unwrap(),
    );
    let mut parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&reference).unwrap()).unwrap();
    parsed["mean"][0] = serde_json::json!(99.0);
    std::fs::write(&reference, serde_json::to_string(&parsed).unwrap()).unwrap();

    let output = uha()
        .args(["moments", "--samples", "100", "--record"])
        .arg(&out)
        .arg("--reference")
        .arg(&reference)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&output.stderr).contains("checksum"),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn grid_searches_the_corrected_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.jsonl");
    // Narrow Gaussian so every rejection target is reachable within eps_max.
    let config = write_config(
        dir.path(),
        "grid.json",
        serde_json::json!({
            "method": "hais",
            "target": {"kind": "gaussian", "dim": 2, "scale": [0.15, 0.2]},
            "k": 4,
            "trainable": [],
            "eval_draws": 400,
            "n_seeds": 1,
            "base_seed": 3,
            "init_from_plain_vi": false,
            "grid": {"etas": [0.5, 0.9], "target_rejection_rates": [0.1, 0.4], "pilot_draws": 32},
            "out": out
        }),
    );
    run_ok(uha().args(["grid", "--config"]).arg(&config).output().unwrap());
    let records = read_records(&out).unwrap();
    let run = &records[0];
    let cells = run.grid_cells.as_ref().unwrap();
    assert_eq!(cells.len(), 4);
    let best = run.final_eval.unwrap();
    for cell in cells.iter().flat_map(|c| c.eval) {
        assert!(best.mean >= cell.mean - 1e-12);
    }
}

#[test]
fn table_and_csv_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("table.csv");
    run_ok(
        uha()
            .args([
                "table1",
                "--dims",
                "2",
                "--uha-ks",
                "2",
                "--iw-ks",
                "4",
                "--steps",
                "30",
                "--seeds",
                "1",
                "--eval-draws",
                "300",
                "--out",
            ])
            .arg(&csv_path)
            .output()
            .unwrap(),
    );
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "dim,plain_vi_k1_mean,plain_vi_k1_stderr,uha_k2_mean,uha_k2_stderr,iw_k4_mean,iw_k4_stderr"
    );
    assert_eq!(csv.lines().count(), 2);

    // export-csv over an optimize run.
    let out = dir.path().join("runs.jsonl");
    let config = write_config(dir.path(), "exp.json", tiny_uha_config(&out));
    run_ok(uha().args(["optimize", "--config"]).arg(&config).output().unwrap());
    let exported = dir.path().join("records.csv");
    run_ok(
        uha()
            .args(["export-csv", "--records"])
            .arg(&out)
            .arg("--out")
            .arg(&exported)
            .output()
            .unwrap(),
    );
    let text = std::fs::read_to_string(&exported).unwrap();
    assert!(text.lines().next().unwrap().starts_with("kind,method,k,seed,mean"));
    assert_eq!(text.lines().count(), 4); // header + 2 runs + summary
}

#[test]
fn subsets_ranks_group_choices() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("subsets.jsonl");
    let mut config_value = tiny_uha_config(&out);
    config_value["trainable"] = serde_json::json!([]);
    let config = write_config(dir.path(), "exp.json", config_value);
    let stdout = run_ok(
        uha()
            .args(["subsets", "--config"])
            .arg(&config)
            .args(["--subset", "eps,eta", "--subset", "q,eps,eta", "--subset", "eps,eta"])
            .output()
            .unwrap(),
    );
    assert!(stdout.contains("subset ranking"), "{stdout}");
    let first = stdout.lines().find(|l| l.trim_start().starts_with("q+") || l.trim_start().starts_with("eps")).unwrap();
    assert!(first.contains('±') || first.contains("0."), "{first}");
    let records = read_records(&out).unwrap();
    assert_eq!(records.last().unwrap().kind, "subsets");
}
