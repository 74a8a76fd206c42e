//! End-to-end checks of the binary: deterministic outputs, pinned
//! values on the bundled fixtures, and exit-code discipline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transferlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf-8 stdout")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
            "name": "cli determinism",
            "instance": {"kind": "two_atom_gap"},
            "grid": [
                {"algo": "weak", "n_q": 300, "n_p": 300},
                {"algo": "strong", "n_q": 300, "n_p": 300},
                {"algo": "target_only", "n_q": 300, "n_p": 0},
                {"algo": "source_only", "n_q": 0, "n_p": 300}
            ],
            "trials": 6,
            "tau": 0.05,
            "master_seed": 424242,
            "mc_trials": 120,
            "d_vc": 1
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn transfer_sim_is_byte_identical_across_thread_counts_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let mut outputs: Vec<(String, String)> = Vec::new();
    for (label, threads) in [("t1", "1"), ("t2", "2"), ("t8", "8"), ("t8b", "8")] {
        let out_dir = dir.path().join(label);
        let output = run(&[
            "transfer-sim",
            "--config",
            config.to_str().unwrap(),
            "--threads",
            threads,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{label}: {output:?}");
        let csv = fs::read_to_string(out_dir.join("cli_determinism_trials.csv")).unwrap();
        let summary = fs::read_to_string(out_dir.join("cli_determinism_summary.json")).unwrap();
        outputs.push((csv, summary));
    }
    for (csv, summary) in &outputs[1..] {
        assert_eq!(csv, &outputs[0].0, "trial rows drifted");
        assert_eq!(summary, &outputs[0].1, "summary drifted");
    }
    // shape: header plus 4 * 6 rows, 8 columns each
    let mut lines = outputs[0].0.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial,algo,np,nq,case,excess_q,bound,bound_ok"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 24);
    for row in rows {
        assert_eq!(row.split(',').count(), 8, "row {row:?}");
    }
}

#[test]
fn transfer_sim_streams_csv_without_an_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let output = run(&["transfer-sim", "--config", config.to_str().unwrap()]);
    assert!(output.status.success());
    let text = stdout(&output);
    assert!(text.starts_with("trial,algo,np,nq,case,excess_q,bound,bound_ok\n"));
    assert_eq!(text.lines().count(), 25);
}

#[test]
fn moduli_pins_the_gap_fixture() {
    let output = run(&[
        "moduli",
        "--instance",
        "two_atom_gap",
        "--eps1",
        "0.4,0.5",
        "--eps2",
        "0",
    ]);
    assert!(output.status.success());
    let text = stdout(&output);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eps1,eps2,weak,strong,pivot,pivot_sharp"
    );
    let parse_row =
        |line: &str| -> Vec<f64> { line.split(',').map(|c| c.parse::<f64>().unwrap()).collect() };
    let row1 = parse_row(lines.next().unwrap());
    assert!((row1[2] - 0.40).abs() < 1e-12, "weak at 0.4: {}", row1[2]);
    assert!((row1[3] - 0.40).abs() < 1e-12, "strong at (0.4, 0)");
    assert!((row1[4] - 0.40).abs() < 1e-12, "pivot");
    assert!((row1[5] - 0.40).abs() < 1e-12, "pivot sharp");
    let row2 = parse_row(lines.next().unwrap());
    assert!((row2[2] - 0.90).abs() < 1e-12, "weak at 0.5: {}", row2[2]);
    assert!((row2[3] - 0.40).abs() < 1e-12, "strong at (0.5, 0)");
}

#[test]
fn transfer_sim_accepts_inline_flags() {
    let output = run(&[
        "transfer-sim",
        "--instance",
        "two_atom_gap",
        "--np",
        "0,200",
        "--nq",
        "200",
        "--algo",
        "both",
        "--trials",
        "3",
        "--d-vc",
        "1",
        "--seed",
        "5",
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = stdout(&output);
    // strong refuses n_q = 0, so "both" over {0,200}x{200} gives 4 grid
    // points; weak with n_p = 0 degenerates to target-only ERM
    assert_eq!(text.lines().count(), 1 + 4 * 3);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));

    let degenerate = run(&[
        "transfer-sim",
        "--instance",
        "two_atom_gap",
        "--np",
        "0",
        "--nq",
        "0",
    ]);
    assert_eq!(degenerate.status.code(), Some(2), "{degenerate:?}");
}

#[test]
fn out_file_flag_writes_csv_and_summary_side_by_side() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs/gap.csv");
    let output = run(&[
        "transfer-sim",
        "--instance",
        "two_atom_gap",
        "--np",
        "100",
        "--nq",
        "100",
        "--algo",
        "weak",
        "--trials",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("trial,algo,np,nq,case,"));
    let summary_text = fs::read_to_string(dir.path().join("runs/gap_summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&summary_text).unwrap();
    assert_eq!(summary["trials"], serde_json::json!(2));
}

#[test]
fn discrepancy_pins_the_uninformative_fixture() {
    let output = run(&["discrepancy", "--instance", "uninformative_source"]);
    assert!(output.status.success());
    let text = stdout(&output);
    let lookup = |name: &str| -> f64 {
        text.lines()
            .find(|l| l.starts_with(&format!("{name},")))
            .unwrap_or_else(|| panic!("{name} missing from {text}"))
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((lookup("y_disc") - 0.45).abs() < 1e-12);
    assert!((lookup("y_disc_excess") - 0.90).abs() < 1e-12);
    assert!(lookup("a_disc").abs() < 1e-12);
    assert!((lookup("pivot_sharp") - 0.90).abs() < 1e-12);

    let subset = run(&[
        "discrepancy",
        "--instance",
        "uninformative_source",
        "--measures",
        "y_disc,pivot",
    ]);
    assert!(subset.status.success());
    let text = stdout(&subset);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("y_disc,"));
    assert!(lines[2].starts_with("pivot,"));

    let unknown = run(&[
        "discrepancy",
        "--instance",
        "uninformative_source",
        "--measures",
        "nope",
    ]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn confidence_reports_a_passing_contract() {
    let output = run(&[
        "confidence",
        "--instance",
        "two_atom_gap",
        "--kind",
        "rootn",
        "--side",
        "q",
        "--n",
        "2000",
        "--d-vc",
        "1",
        "--trials",
        "3",
        "--seed",
        "7",
    ]);
    assert!(output.status.success());
    let text = stdout(&output);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial,kind,side,n,tau,members,erm,eps,strength,bitmask,contract_ok"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row[0], t.to_string());
        assert_eq!(row[1], "rootn");
        assert_eq!(row[2], "q");
        assert_eq!(row[6], "1", "the target optimum is the empirical winner");
        assert_eq!(row[10], "true");
    }
    // independent draws: at least the bitmask column is populated everywhere
    assert!(rows.iter().all(|r| !r[9].is_empty()));
}

#[test]
fn lowerbound_check_passes_and_bad_parameters_exit_two() {
    let output = run(&[
        "lowerbound",
        "--check",
        "--d",
        "8",
        "--np",
        "2000",
        "--nq",
        "2000",
    ]);
    assert!(output.status.success(), "{output:?}");
    let doc: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(doc["ok"], serde_json::Value::Bool(true));
    assert_eq!(doc["members"], serde_json::json!(2));
    assert_eq!(doc["membership"]["ok"], serde_json::Value::Bool(true));
    assert_eq!(doc["kl"]["ok"], serde_json::Value::Bool(true));

    let bad = run(&["lowerbound", "--check", "--d", "8", "--c0", "2.0"]);
    assert_eq!(bad.status.code(), Some(2), "{bad:?}");

    let neither = run(&["lowerbound", "--d", "8"]);
    assert_eq!(neither.status.code(), Some(2));
}

#[test]
fn lowerbound_accepts_a_tabulated_envelope() {
    let dir = tempfile::tempdir().unwrap();
    // concave, so the default scaling exponent passes the grid check
    let good = dir.path().join("sqrtish.json");
    fs::write(
        &good,
        r#"{"knots": [[0.0, 0.0], [0.01, 0.05], [0.04, 0.1], [1.0, 0.5]], "kappa": 1.0}"#,
    )
    .unwrap();
    let output = run(&[
        "lowerbound",
        "--check",
        "--d",
        "8",
        "--np",
        "4000",
        "--nq",
        "4000",
        "--f",
        good.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");

    // convex through the origin violates the condition -> config error
    let bad = dir.path().join("square.json");
    fs::write(&bad, r#"{"knots": [[0.0, 0.0], [0.5, 0.05], [1.0, 1.0]]}"#).unwrap();
    let rejected = run(&[
        "lowerbound",
        "--check",
        "--d",
        "8",
        "--f",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(rejected.status.code(), Some(2), "{rejected:?}");
}

#[test]
fn report_flags_violations_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("run");
    let output = run(&[
        "transfer-sim",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let summary_path = out_dir.join("cli_determinism_summary.json");
    let clean = run(&["report", "--summary", summary_path.to_str().unwrap()]);
    assert_eq!(clean.status.code(), Some(0), "{clean:?}");

    // doctor the summary so one point is saturated with violations
    let text = fs::read_to_string(&summary_path).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["points"][0]["coverage"]["violations"] = serde_json::json!(6);
    doc["points"][0]["coverage"]["rate"] = serde_json::json!(1.0);
    let doctored = dir.path().join("doctored.json");
    fs::write(&doctored, serde_json::to_string(&doc).unwrap()).unwrap();
    let flagged = run(&["report", "--summary", doctored.to_str().unwrap()]);
    assert_eq!(flagged.status.code(), Some(1), "{flagged:?}");
    assert!(stdout(&flagged).contains("VIOLATION"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["transfer-sim", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));

    let stranger = dir.path().join("stranger.json");
    fs::write(
        &stranger,
        r#"{
            "name": "x",
            "instance": {"kind": "two_atom_gap", "oops": 1},
            "grid": [{"algo": "weak", "n_q": 10, "n_p": 10}],
            "trials": 2,
            "tau": 0.05,
            "master_seed": 1
        }"#,
    )
    .unwrap();
    let output = run(&["transfer-sim", "--config", stranger.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");

    let usage = bin().arg("not-a-command").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}
