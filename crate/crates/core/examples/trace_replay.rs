//! Replay a recorded trace under every policy and dump BF-IO's per-step loads.
//!
//! `cargo run --example trace_replay -- [TRACE] [STEPS_CSV]`

use std::fs::File;

use barrier_lb::engine::{run, write_steps_csv, SimConfig};
use barrier_lb::metrics::MetricsReport;
use barrier_lb::policies::PolicyKind;
use barrier_lb::workload::load_trace;

fn main() -> barrier_lb::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/trace.csv").to_string());
    let instance = load_trace(&path)?;
    println!("{}: {} requests, total workload {}", path, instance.len(), instance.total_workload()?);

    for policy in [PolicyKind::Fcfs, PolicyKind::Jsq, PolicyKind::BfioGreedy] {
        let config = SimConfig {
            workers: 4,
            batch: 8,
            policy,
            horizon: 20,
            ..SimConfig::default()
        };
        let result = run(&config, instance.clone())?;
        let r = MetricsReport::from_result(&result, &config.power);
        println!(
            "{:<12} imbalance {:>10.1}  tpot {:.5} s  energy {:.1} J",
            policy.to_string(), r.avg_imbalance, r.tpot, r.energy
        );
        if let (PolicyKind::BfioGreedy, Some(out)) = (policy, args.next()) {
            let file = File::create(&out).map_err(|e| barrier_lb::Error::Internal(e.to_string()))?;
            write_steps_csv(file, &result).map_err(|e| barrier_lb::Error::Internal(e.to_string()))?;
            println!("per-step loads written to {out}");
        }
    }
    Ok(())
}
