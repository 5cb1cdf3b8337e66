//! Energy of FCFS against BF-IO as the cluster grows, with long prompts so
//! that per-token compute dominates the step time.

use barrier_lb::engine::{OverloadedSpec, SimConfig, Simulation};
use barrier_lb::metrics::{energy_saving_lower_bound, MetricsReport};
use barrier_lb::policies::PolicyKind;
use barrier_lb::workload::{DecodeDistribution, DriftSpec, PrefillDistribution};

fn report(workers: usize, policy: PolicyKind) -> barrier_lb::Result<MetricsReport> {
    let config = SimConfig {
        workers,
        batch: 16,
        policy,
        max_steps: 3300,
        seed: 11,
        ..SimConfig::default()
    };
    let pool = OverloadedSpec {
        prefill: PrefillDistribution::Uniform { s_max: 16384 },
        decode: DecodeDistribution::Geometric { p: 0.02 },
        drift: DriftSpec::unit(),
        min_pool: workers * 16,
    };
    let result = Simulation::new(config.clone(), pool)?.run_to_end()?;
    Ok(MetricsReport::from_parts(&result.steps[300..], &result.requests, &config.power))
}

fn main() -> barrier_lb::Result<()> {
    println!("{:>3} {:>12} {:>12} {:>8} {:>8}", "G", "fcfs_j", "bfio_j", "saving", "bound");
    for g in [2, 4, 8, 16, 32] {
        let fcfs = report(g, PolicyKind::Fcfs)?;
        let bfio = report(g, PolicyKind::BfioGreedy)?;
        let alpha = fcfs.imb_total / bfio.imb_total.max(f64::MIN_POSITIVE);
        // the bound ignores the fixed per-step overhead, so it overstates savings here
        let bound = energy_saving_lower_bound(alpha, fcfs.eta_sum, &Default::default());
        println!(
            "{g:>3} {:>12.0} {:>12.0} {:>7.2}% {:>7.2}%",
            fcfs.energy,
            bfio.energy,
            100.0 * (1.0 - bfio.energy / fcfs.energy),
            100.0 * bound
        );
    }
    Ok(())
}
