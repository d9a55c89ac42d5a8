//! End-to-end tests of the `odm` binary and the command library.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn odm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_odm"))
}

fn run(args: &[&str]) -> Output {
    odm().args(args).output().expect("binary runs")
}

fn make_dataset(dir: &Path, duration: u64, seed: u64) -> PathBuf {
    let path = dir.join("data.csv");
    let out = run(&[
        "synth",
        "--output",
        path.to_str().unwrap(),
        "--pairs",
        "1",
        "--duration",
        &duration.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert!(out.status.success(), "synth failed: {out:?}");
    path
}

const FAST: &[&str] = &[
    "--retrain-buckets",
    "30",
    "--epochs",
    "2",
    "--deterministic",
];

#[test]
fn replay_clean_file_exits_zero_with_summary() {
    let dir = TempDir::new().unwrap();
    let data = make_dataset(dir.path(), 900, 11);
    let events = dir.path().join("events.jsonl");
    let mut args = vec!["replay", "--input", data.to_str().unwrap(), "--output"];
    args.push(events.to_str().unwrap());
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("buckets="), "summary missing: {stderr}");
    assert!(stderr.contains("latency_us"));
    assert!(events.exists());
}

#[test]
fn replay_missing_file_exits_two() {
    let out = run(&["replay", "--input", "/no/such/file.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replay_malformed_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "1.0,n1,cpu0_power,1.0\nnot a sample\n").unwrap();
    let out = run(&["replay", "--input", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn replay_shorter_than_one_window_emits_no_events() {
    let dir = TempDir::new().unwrap();
    // 20 seconds = 2 buckets < w=4
    let data = make_dataset(dir.path(), 20, 3);
    let events = dir.path().join("events.jsonl");
    let out = run(&[
        "replay",
        "--input",
        data.to_str().unwrap(),
        "--output",
        events.to_str().unwrap(),
        "--deterministic",
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&events).unwrap().len(), 0);
}

#[test]
fn deterministic_replays_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let data = make_dataset(dir.path(), 1200, 21);
    let run_once = |tag: &str| {
        let events = dir.path().join(format!("events_{tag}.jsonl"));
        let mut args = vec!["replay", "--input", data.to_str().unwrap(), "--output"];
        args.push(events.to_str().unwrap());
        args.extend_from_slice(FAST);
        args.extend_from_slice(&["--seed", "5"]);
        let out = run(&args);
        assert!(out.status.success());
        fs::read(&events).unwrap()
    };
    let a = run_once("a");
    let b = run_once("b");
    assert!(!a.is_empty(), "expected some events in this configuration");
    assert_eq!(a, b);
}

#[test]
fn export_rows_match_buckets_and_errors_recompute() {
    let dir = TempDir::new().unwrap();
    let data = make_dataset(dir.path(), 600, 9);
    let export = dir.path().join("export.csv");
    let mut args = vec!["export", "--input", data.to_str().unwrap(), "--output"];
    args.push(export.to_str().unwrap());
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert!(out.status.success());
    let text = fs::read_to_string(&export).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,node,cpu0_power_raw,"));
    assert!(header.contains("node_power_threshold"));
    assert_eq!(header.split(',').count(), 2 + 5 * 6);

    let stderr = String::from_utf8_lossy(&out.stderr);
    let buckets: u64 = stderr
        .split("buckets=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("summary has bucket count");
    let rows: Vec<&str> = lines.collect();
    // every bucket is finalized by the final flush (2 nodes in the file)
    assert_eq!(rows.len() as u64, buckets);

    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        for f in 0..5 {
            let base = 2 + f * 6;
            let scaled: f64 = cols[base + 2].parse().unwrap();
            let recon_scaled: f64 = cols[base + 3].parse().unwrap();
            let error: f64 = cols[base + 4].parse().unwrap();
            let recomputed = (scaled - recon_scaled).abs();
            assert!(
                (error - recomputed).abs() <= 1e-9,
                "error column mismatch: {error} vs {recomputed}"
            );
        }
    }
}

#[test]
fn gradcheck_passes_and_prints_per_tensor_report() {
    let out = run(&["gradcheck", "--seed", "7"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("encoder[0].w_x max_rel_error"));
    assert!(stdout.contains("proj_b max_rel_error"));
    assert!(stdout.contains("result PASS"));
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let data = make_dataset(dir.path(), 400, 2);
    let config = dir.path().join("odm.conf");
    fs::write(
        &config,
        "retrain-buckets=30\nepochs=2\ndeterministic=true\nseed=5\n",
    )
    .unwrap();
    let events = dir.path().join("ev.jsonl");
    let out = run(&[
        "replay",
        "--input",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--output",
        events.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    // 400 s -> 40 buckets per node -> one interval boundary at 30
    assert!(stderr.contains("intervals=2"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = TempDir::new().unwrap();
    let data = make_dataset(dir.path(), 100, 2);
    let config = dir.path().join("odm.conf");
    fs::write(&config, "epochz=2\n").unwrap();
    let out = run(&[
        "replay",
        "--input",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn help_lists_every_pipeline_flag() {
    let out = run(&["replay", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--input",
        "--output",
        "--window",
        "--stride",
        "--bucket-seconds",
        "--retrain-buckets",
        "--scaler",
        "--epochs",
        "--lr",
        "--seed",
        "--state-dir",
        "--deterministic",
        "--background-training",
        "--config",
    ] {
        assert!(text.contains(flag), "help missing {flag}");
    }
    let out = run(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["replay", "live", "synth", "eval", "gradcheck", "export"] {
        assert!(text.contains(cmd), "help missing command {cmd}");
    }
}

#[test]
fn synth_standard_scenario_writes_labels() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("std.csv");
    // full 16 h so the fault schedule fits
    let out = run(&[
        "synth",
        "--output",
        data.to_str().unwrap(),
        "--scenario",
        "standard",
        "--seed",
        "4",
    ]);
    assert!(out.status.success());
    let labels_path = dir.path().join("std.labels.csv");
    let labels = fs::read_to_string(&labels_path).unwrap();
    assert_eq!(labels.lines().count(), 7); // header + 6 faults
    for kind in [
        "power_spike",
        "temp_runaway",
        "stuck_sensor",
        "pair_divergence",
    ] {
        assert!(labels.contains(kind), "labels missing {kind}");
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = make_dataset(dir.path(), 300, 77);
    let a_bytes = fs::read(&a).unwrap();
    fs::remove_file(&a).unwrap();
    let b = make_dataset(dir.path(), 300, 77);
    assert_eq!(a_bytes, fs::read(&b).unwrap());
}

#[test]
fn state_dir_round_trip_through_the_binary() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state");
    // 600 s = 60 buckets = two 30-bucket intervals
    let data = make_dataset(dir.path(), 600, 13);
    let mut args = vec![
        "replay",
        "--input",
        data.to_str().unwrap(),
        "--state-dir",
        state.to_str().unwrap(),
    ];
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert!(out.status.success());
    let mut states: Vec<_> = fs::read_dir(&state)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    states.sort();
    assert_eq!(states, vec!["n0.state", "n1.state"]);

    // restoring must not error and should continue from interval >= 2
    let out = run(&args);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(!stderr.contains("starting cold"), "stderr: {stderr}");
}

#[test]
fn live_reads_from_stdin() {
    let dir = TempDir::new().unwrap();
    let data = make_dataset(dir.path(), 300, 8);
    let csv = fs::read(&data).unwrap();
    let mut child = odm()
        .args(["live", "--retrain-buckets", "30", "--epochs", "2"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.as_mut().unwrap().write_all(&csv).unwrap();
    drop(child.stdin.take());
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("buckets=60"));
}

#[cfg(unix)]
#[test]
fn live_reads_from_a_unix_socket() {
    use std::os::unix::net::UnixListener;

    let dir = TempDir::new().unwrap();
    let sock = dir.path().join("telemetry.sock");
    let listener = UnixListener::bind(&sock).unwrap();
    let data = make_dataset(dir.path(), 200, 6);
    let csv = fs::read(&data).unwrap();
    let writer = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        stream.write_all(&csv).unwrap();
    });
    let out = run(&[
        "live",
        "--input",
        sock.to_str().unwrap(),
        "--retrain-buckets",
        "30",
        "--epochs",
        "2",
    ]);
    writer.join().unwrap();
    assert!(out.status.success(), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("buckets="));
}

#[test]
fn eval_on_a_prebuilt_dataset_reports_json() {
    let dir = TempDir::new().unwrap();
    // tiny labeled dataset: clean data, one label file we write ourselves
    let data = make_dataset(dir.path(), 900, 31);
    fs::write(
        dir.path().join("data.labels.csv"),
        "node_id,metric,start,end,kind\nn0,cpu0_power,600,700,power_spike\n",
    )
    .unwrap();
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--input",
        data.to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
        "--retrain-buckets",
        "30",
        "--epochs",
        "2",
        "--deterministic",
    ]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["precision"].is_number());
    assert!(report["recall"].is_number());
    assert!(report["f1"].is_number());
    assert_eq!(report["labels_total"], 1);
    assert!(report["per_fault"].as_array().unwrap().len() == 1);
}

#[test]
fn eval_with_zero_labels_sets_the_flag() {
    let dir = TempDir::new().unwrap();
    let data = make_dataset(dir.path(), 600, 32);
    fs::write(
        dir.path().join("data.labels.csv"),
        "node_id,metric,start,end,kind\n",
    )
    .unwrap();
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--input",
        data.to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
        "--retrain-buckets",
        "30",
        "--epochs",
        "2",
        "--deterministic",
    ]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["no_labels"], true);
    assert_eq!(report["recall"], 1.0);
}
