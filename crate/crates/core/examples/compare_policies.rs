//! FCFS, JSQ and BF-IO side by side on the same overloaded pool.

use barrier_lb::engine::{OverloadedSpec, SimConfig, Simulation};
use barrier_lb::metrics::MetricsReport;
use barrier_lb::policies::PolicyKind;
use barrier_lb::workload::{DecodeDistribution, DriftSpec, PrefillDistribution};

fn main() -> barrier_lb::Result<()> {
    let (workers, batch) = (8, 16);
    let pool = OverloadedSpec {
        prefill: PrefillDistribution::Uniform { s_max: 64 },
        decode: DecodeDistribution::Geometric { p: 0.02 },
        drift: DriftSpec::unit(),
        min_pool: workers * batch,
    };

    println!("{:<18} {:>14} {:>14} {:>12}", "policy", "avg_imbalance", "tok/s", "energy_j");
    for (policy, horizon) in [
        (PolicyKind::Fcfs, 0),
        (PolicyKind::Jsq, 0),
        (PolicyKind::BfioGreedy, 0),
        (PolicyKind::BfioGreedy, 20),
    ] {
        let config = SimConfig {
            workers,
            batch,
            policy,
            horizon,
            max_steps: 5000,
            seed: 7,
            ..SimConfig::default()
        };
        let result = Simulation::new(config.clone(), pool.clone())?.run_to_end()?;
        let r = MetricsReport::from_result(&result, &config.power);
        let name = format!("{policy} H={horizon}");
        println!("{name:<18} {:>14.1} {:>14.0} {:>12.0}", r.avg_imbalance, r.throughput, r.energy);
    }
    Ok(())
}
