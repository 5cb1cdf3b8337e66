use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_barrier-lb");

fn barrier_lb(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

const TINY: [&str; 8] = [
    "--set",
    "workload.rate=40",
    "--set",
    "workload.duration=0.5",
    "--set",
    "workers=3",
    "--set",
    "batch=2",
];

/// Subcommand (and its positional arguments) first, then the tiny workload.
fn with_tiny<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = extra.to_vec();
    v.extend_from_slice(&TINY);
    v
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn run_writes_pinned_summary_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = barrier_lb(&with_tiny(&["run", "--seed", "4", "--emit-steps"]), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(
        keys,
        [
            "seed",
            "policy",
            "completed_all",
            "avg_imbalance",
            "throughput_tok_s",
            "tpot_s_tok",
            "energy_j",
            "eta_sum",
            "imb_total",
            "total_workload",
            "steps",
            "completed_requests"
        ]
    );
    assert!(text.starts_with("seed = 4\n"));

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for k in ["avg_imbalance", "throughput_tok_s", "tpot_s_tok", "energy_j", "eta_sum", "seed", "policy"] {
        assert!(json.get(k).is_some(), "summary.json lacks {k}");
    }
    assert_eq!(header(&dir.path().join("steps.csv")), "k,clock_start,dt,max_load,active_count,load_0,load_1,load_2");
    let echo = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(echo.contains("seed = 4\n"));
    assert!(echo.contains("workload.source = poisson\n"));
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = barrier_lb(&with_tiny(&["run", "--seed", "9", "--emit-steps"]), d.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["summary.txt", "summary.json", "steps.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_schema_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = barrier_lb(&with_tiny(&["compare", "fcfs,fcfs,bfio-greedy"]), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "policy,avg_imbalance,throughput,tpot,energy");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], lines[2]);
    assert!(lines[3].starts_with("bfio-greedy,"));

    let single = barrier_lb(&with_tiny(&["compare", "fcfs"]), dir.path());
    assert_eq!(single.status.code(), Some(1));
}

#[test]
fn sweep_h_rows_match_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = barrier_lb(&with_tiny(&["sweep-h", "0"]), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("sweep_h.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "h,avg_imbalance,throughput,tpot,energy");
    assert_eq!(lines.len(), 2);

    let run_dir = tempfile::tempdir().unwrap();
    barrier_lb(&with_tiny(&["run", "--horizon", "0"]), run_dir.path());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.path().join("summary.json")).unwrap()).unwrap();
    let row: Vec<f64> = lines[1].split(',').skip(1).map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[0], json["avg_imbalance"].as_f64().unwrap());
    assert_eq!(row[3], json["energy_j"].as_f64().unwrap());
}

#[test]
fn sweep_g_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = barrier_lb(&with_tiny(&["sweep-g", "1,2,4"]), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("sweep_g.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "g,policy,avg_imbalance,throughput,tpot,energy,saving");
    assert_eq!(lines.len(), 1 + 2 * 3);
    // a single worker cannot be imbalanced
    let g1: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(g1[0], "1");
    assert!(g1[6].parse::<f64>().unwrap().abs() < 1e-12);
}

#[test]
fn iir_single_cell_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "iir", "--batch", "4", "--workers", "2", "--trials", "3", "--set", "iir.steps=300", "--set", "iir.warmup=20",
    ];
    for d in [&a, &b] {
        assert_eq!(barrier_lb(&args, d.path()).status.code(), Some(0));
    }
    let csv = fs::read_to_string(a.path().join("iir.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "B,G,fcfs_mean,bfio_mean,ratio,stderr,trials");
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv, fs::read_to_string(b.path().join("iir.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = barrier_lb(
        &["run", "--set", &format!("workload.trace={}", missing.display())],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let partial = barrier_lb(&with_tiny(&["run", "--set", "max_steps=3"]), dir.path());
    assert_eq!(partial.status.code(), Some(2));

    let bad = barrier_lb(&["run", "--set", "wrokers=3"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn validate_trace_reports_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    fs::write(&trace, "arrival_time,prefill,decode\n0.0,10,3\n0.5,30,5\n").unwrap();
    let out = Command::new(BIN).args(["validate-trace"]).arg(&trace).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("requests = 2\n"));
    assert!(text.contains("prefill_max = 30\n"));

    fs::write(&trace, "arrival_time,prefill,decode\n0.0,10,3\n0.5,-1,5\n").unwrap();
    let out = Command::new(BIN).args(["validate-trace"]).arg(&trace).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}
