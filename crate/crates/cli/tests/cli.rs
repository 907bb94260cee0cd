use std::path::Path;
use std::process::{Command, Output};

fn svo_merge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svo-merge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn simulate_writes_log_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = svo_merge(&[
        "simulate",
        "--hdv-svo",
        "preset:egoistic",
        "--out",
        out.to_str().unwrap(),
        "--max-steps",
        "50",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert!(csv.starts_with("t,p1,v1,a1,p2,v2,a2,phi1,phi2_est,phi2_true,potential,dist\n"));
    let json = std::fs::read_to_string(out.join("snapshots.json")).unwrap();
    assert_eq!(json.matches("\"t\"").count(), 6);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().nth(1).unwrap().starts_with("0.261799"));
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    write(&cfg, "# shorter horizon\nH = 5\nLc = 100\n");
    let out = dir.path().join("run");
    let o = svo_merge(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--hdv-svo",
        "0.5",
        "--out",
        out.to_str().unwrap(),
        "--max-steps",
        "3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(out.join("log.csv")).unwrap();
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[1].parse::<f64>().unwrap(), -100.0);
}

#[test]
fn config_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let bad = dir.path().join("bad.txt");
    write(&bad, "w1 = 1\nnot_a_key = 2\n");
    for args in [
        vec![
            "simulate",
            "--hdv-svo",
            "2.0",
            "--out",
            out.to_str().unwrap(),
        ],
        vec![
            "simulate",
            "--hdv-svo",
            "preset:grumpy",
            "--out",
            out.to_str().unwrap(),
        ],
        vec![
            "simulate",
            "--config",
            bad.to_str().unwrap(),
            "--hdv-svo",
            "0.5",
            "--out",
            out.to_str().unwrap(),
        ],
        vec![
            "simulate",
            "--config",
            dir.path().join("missing.txt").to_str().unwrap(),
            "--hdv-svo",
            "0.5",
            "--out",
            out.to_str().unwrap(),
        ],
    ] {
        let o = svo_merge(&args);
        assert_eq!(
            o.status.code(),
            Some(3),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = svo_merge(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--hdv-svo",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn replay_matches_logged_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = svo_merge(&[
        "simulate",
        "--hdv-svo",
        "1.0",
        "--out",
        out.to_str().unwrap(),
        "--max-steps",
        "60",
    ]);
    assert!(o.status.success());
    let o = svo_merge(&[
        "estimate-replay",
        "--log",
        out.join("log.csv").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let replay: Vec<f64> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let csv = std::fs::read_to_string(out.join("log.csv")).unwrap();
    let logged: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(8).unwrap().parse().unwrap())
        .collect();
    assert_eq!(replay.len(), logged.len());
    for (a, b) in replay.iter().zip(&logged) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn grid_reports_one_row_per_value() {
    let o = svo_merge(&[
        "grid",
        "--svo-list",
        "preset:egoistic,0.7,preset:altruistic",
        "--max-steps",
        "80",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("0.261799\thdv-first"));
    assert!(rows[2].starts_with("0.700000"));
}
