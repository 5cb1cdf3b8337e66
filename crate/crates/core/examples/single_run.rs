//! One simulation on a Poisson workload, then its metrics.

use barrier_lb::engine::{run, SimConfig};
use barrier_lb::metrics::MetricsReport;
use barrier_lb::policies::PolicyKind;
use barrier_lb::workload::{sample_instance, DecodeDistribution, PrefillDistribution};

fn main() -> barrier_lb::Result<()> {
    let instance = sample_instance(
        &PrefillDistribution::Uniform { s_max: 512 },
        &DecodeDistribution::Geometric { p: 0.02 },
        300.0,
        2.0,
        42,
    )?;
    let config = SimConfig {
        workers: 4,
        batch: 16,
        policy: PolicyKind::BfioGreedy,
        horizon: 10,
        ..SimConfig::default()
    };
    let result = run(&config, instance.clone())?;
    let report = MetricsReport::from_result(&result, &config.power);

    println!("{} requests, {} steps, all finished: {}", instance.len(), result.steps.len(), result.completed_all);
    print!("{}", report.to_kv_text());
    Ok(())
}
