//! End-to-end checks of the three commands, run both through the library
//! entry point and through the compiled binary (for exit codes).

use kernel_cblb::commands::run;
use kernel_cblb::config::RunConfig;
use kernel_cblb::output::TIMING_HEADER;
use std::path::Path;
use std::process::Command;

fn run_config(json: &str, workers: Option<usize>, out_dir: &Path) {
    let cfg = RunConfig::from_json(json).expect("config must parse");
    run(&cfg, workers, Some(out_dir)).expect("command must succeed");
}

/// Drops the trailing `k` columns of every line so wall-clock fields do not
/// enter byte comparisons.
fn mask_last_columns(text: &str, k: usize) -> String {
    text.lines()
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            fields[..fields.len() - k].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn simulate_json(seed: u64) -> String {
    format!(
        r#"{{"command": "simulate", "estimator": "minimax", "dgp": "ate",
            "n": 400, "gamma_exponent": 0.7, "r": 50, "alpha": 0.05,
            "seed": {seed}, "replications": 4}}"#
    )
}

#[test]
fn simulate_writes_coverage_and_zipplot() {
    let dir = tempfile::tempdir().unwrap();
    run_config(&simulate_json(11), Some(1), dir.path());
    let coverage = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    let mut lines = coverage.lines();
    assert_eq!(
        lines.next().unwrap(),
        "replication,estimator,s,b,n,lower,upper,point,covered,truth,seconds"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4, "one row per replication");
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], (i + 1).to_string());
        assert_eq!(fields[1], "minimax");
        assert_eq!(fields[2], "6", "s = floor(400 / 66)");
        assert_eq!(fields[3], "66", "b = round(400^0.7)");
        assert_eq!(fields[4], "400");
        assert!(fields[8] == "0" || fields[8] == "1");
        let truth: f64 = fields[9].parse().unwrap();
        assert_eq!(truth, 0.8);
    }

    let zipplot = std::fs::read_to_string(dir.path().join("zipplot.csv")).unwrap();
    let zlines: Vec<&str> = zipplot.lines().collect();
    assert_eq!(zlines[0], "rank,lower,upper,covered");
    assert_eq!(zlines.len(), 5);
    for (i, line) in zlines[1..].iter().enumerate() {
        assert!(
            line.starts_with(&format!("{},", i + 1)),
            "ranks must run 1..=4, got line {line}"
        );
    }
}

#[test]
fn reruns_are_deterministic_and_worker_independent() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let dir3 = tempfile::tempdir().unwrap();
    run_config(&simulate_json(23), Some(1), dir1.path());
    run_config(&simulate_json(23), Some(1), dir2.path());
    run_config(&simulate_json(23), Some(2), dir3.path());

    let zip1 = std::fs::read_to_string(dir1.path().join("zipplot.csv")).unwrap();
    let zip2 = std::fs::read_to_string(dir2.path().join("zipplot.csv")).unwrap();
    let zip3 = std::fs::read_to_string(dir3.path().join("zipplot.csv")).unwrap();
    assert_eq!(zip1, zip2, "rerun must reproduce zipplot.csv byte for byte");
    assert_eq!(zip1, zip3, "worker count must not change zipplot.csv");

    let cov1 = std::fs::read_to_string(dir1.path().join("coverage.csv")).unwrap();
    let cov2 = std::fs::read_to_string(dir2.path().join("coverage.csv")).unwrap();
    let cov3 = std::fs::read_to_string(dir3.path().join("coverage.csv")).unwrap();
    assert_eq!(
        mask_last_columns(&cov1, 1),
        mask_last_columns(&cov2, 1),
        "rerun must reproduce coverage.csv outside the seconds column"
    );
    assert_eq!(
        mask_last_columns(&cov1, 1),
        mask_last_columns(&cov3, 1),
        "worker count must not change coverage.csv outside the seconds column"
    );
}

#[test]
fn simulate_covers_a_policy_value_run() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"command": "simulate", "estimator": "aol_value", "dgp": "policy",
        "n": 300, "b": 60, "r": 40, "alpha": 0.05, "seed": 5, "replications": 2,
        "aol": {"lambda_grid": [1.0]}}"#;
    run_config(json, Some(1), dir.path());
    let coverage = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    let rows: Vec<&str> = coverage.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "aol_value");
        let truth: f64 = fields[9].parse().unwrap();
        assert_eq!(truth, 1.0, "policy truth is the optimal value");
    }
}

#[test]
fn timing_emits_the_pinned_header_and_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"command": "timing", "estimator": "minimax", "dgp": "ate",
        "n_grid": [200, 300], "b": 50, "r": 20, "alpha": 0.05, "seed": 3,
        "repetitions": 2}"#;
    run_config(json, None, dir.path());
    let text = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TIMING_HEADER);
    // 2 grid sizes x 2 methods x 2 repetitions, warm-ups excluded.
    assert_eq!(lines.len(), 9);
    let cblb_200: Vec<&&str> = lines[1..]
        .iter()
        .filter(|l| l.starts_with("cblb,minimax,200,50,4,20,"))
        .collect();
    assert_eq!(cblb_200.len(), 2, "repetitions 0 and 1 at n = 200");
    let full_300: Vec<&&str> = lines[1..]
        .iter()
        .filter(|l| l.starts_with("full_bootstrap,minimax,300,300,1,20,"))
        .collect();
    assert_eq!(full_300.len(), 2, "full bootstrap runs one bag of size n");

    let dir2 = tempfile::tempdir().unwrap();
    run_config(json, None, dir2.path());
    let text2 = std::fs::read_to_string(dir2.path().join("timing.csv")).unwrap();
    assert_eq!(
        mask_last_columns(&text, 3),
        mask_last_columns(&text2, 3),
        "rerun must reproduce timing.csv outside the seconds columns"
    );
}

fn ate_csv(n: usize, seed: u64) -> (String, cblb_core::data::Dataset) {
    use cblb_core::dgp::generate_ate;
    use cblb_core::numerics::RngStream;
    let sample = generate_ate(&RngStream::new(seed, 0), n, 0.8);
    let d = sample.dataset;
    let mut text = String::from("y,w,x1,x2\n");
    for i in 0..d.n() {
        text.push_str(&format!(
            "{:.16e},{},{:.16e},{:.16e}\n",
            d.outcomes()[i],
            d.treatments()[i],
            d.covariates()[(i, 0)],
            d.covariates()[(i, 1)]
        ));
    }
    (text, d)
}

#[test]
fn analyze_matches_a_direct_library_run() {
    use cblb_core::cblb::{run_cblb, MinimaxPlugin};
    use cblb_core::data::CBLBConfig;

    let dir = tempfile::tempdir().unwrap();
    let (csv_text, d) = ate_csv(500, 99);
    let csv_path = dir.path().join("units.csv");
    std::fs::write(&csv_path, &csv_text).unwrap();

    let json = format!(
        r#"{{"command": "analyze", "estimator": "minimax", "b": 100, "r": 60,
            "alpha": 0.05, "seed": 17, "input_csv": {:?},
            "columns": {{"outcome": "y", "treatment": "w", "numeric": ["x1", "x2"]}}}}"#,
        csv_path.to_str().unwrap()
    );
    run_config(&json, Some(1), dir.path());
    let text = std::fs::read_to_string(dir.path().join("analysis.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "estimator,n_used,n_dropped,point,lower,upper,se,seconds"
    );
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&fields[..3], &["minimax", "500", "0"]);

    // The CSV round-trips the generated sample exactly, so the command must
    // reproduce a direct run on the in-memory dataset bit for bit.
    let cfg = RunConfig::from_json(&json).unwrap();
    let plugin = MinimaxPlugin {
        config: cfg.minimax_block().to_config().unwrap(),
    };
    let run_cfg = CBLBConfig::from_bag_size(500, 100, None, 60, 0.05, 17).unwrap();
    let (expect, _) = run_cblb(&d, &plugin, &run_cfg).unwrap();
    assert_eq!(fields[3], format!("{:.16e}", expect.point_estimate));
    assert_eq!(fields[4], format!("{:.16e}", expect.lower));
    assert_eq!(fields[5], format!("{:.16e}", expect.upper));
    assert_eq!(fields[6], format!("{:.16e}", expect.se));
}

#[test]
fn analyze_reports_drop_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let (mut csv_text, _) = ate_csv(400, 7);
    csv_text.push_str("0.5,1,,0.3\n");
    let csv_path = dir.path().join("units.csv");
    std::fs::write(&csv_path, &csv_text).unwrap();
    let json = format!(
        r#"{{"command": "analyze", "estimator": "dml", "b": 80, "r": 40,
            "alpha": 0.05, "seed": 2, "input_csv": {:?},
            "columns": {{"outcome": "y", "treatment": "w", "numeric": ["x1", "x2"]}},
            "filters": [{{"column": "y", "min": -3.5, "max": 3.5}}]}}"#,
        csv_path.to_str().unwrap()
    );
    run_config(&json, Some(1), dir.path());
    let text = std::fs::read_to_string(dir.path().join("analysis.csv")).unwrap();
    let fields: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let n_used: usize = fields[1].parse().unwrap();
    let n_dropped: usize = fields[2].parse().unwrap();
    assert_eq!(n_used + n_dropped, 401, "every record is used or counted");
    assert!(n_dropped >= 1, "the empty-field row must be dropped");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kernel-cblb"))
}

#[test]
fn binary_exit_codes_separate_config_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown key: configuration error, exit 2.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, br#"{"command": "simulate", "shoe_size": 44}"#).unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("shoe_size"), "stderr was: {msg}");

    // Subcommand and config command disagree: exit 2.
    let sim = dir.path().join("sim.json");
    std::fs::write(&sim, simulate_json(1)).unwrap();
    let out = bin()
        .args(["timing", "--config"])
        .arg(&sim)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing config file: exit 2.
    let out = bin()
        .args(["simulate", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unparseable treatment cell: runtime error, exit 3, named row.
    let csv_path = dir.path().join("units.csv");
    std::fs::write(&csv_path, "y,w,x1\n1.0,yes,0.2\n").unwrap();
    let cfg_path = dir.path().join("an.json");
    std::fs::write(
        &cfg_path,
        format!(
            r#"{{"command": "analyze", "estimator": "minimax", "b": 10, "r": 40,
                "alpha": 0.05, "seed": 1, "input_csv": {:?},
                "columns": {{"outcome": "y", "treatment": "w", "numeric": ["x1"]}}}}"#,
            csv_path.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["analyze", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(
        msg.contains("row 1") && msg.contains("yes"),
        "stderr was: {msg}"
    );
}

#[test]
fn binary_simulate_prints_output_paths_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("sim.json");
    std::fs::write(
        &cfg_path,
        r#"{"command": "simulate", "estimator": "minimax", "dgp": "ate",
            "n": 200, "b": 40, "r": 40, "alpha": 0.05, "seed": 8,
            "replications": 2}"#,
    )
    .unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg_path)
        .args(["--workers", "1", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("coverage.csv") && stdout.contains("zipplot.csv"));
    assert!(dir.path().join("coverage.csv").exists());
}
