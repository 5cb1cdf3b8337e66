//! How the lookahead window changes BF-IO's imbalance, and what noisy or
//! completion-blind predictions cost.

use barrier_lb::engine::{OverloadedSpec, SimConfig, Simulation};
use barrier_lb::lookahead::LookaheadMode;
use barrier_lb::metrics::avg_imbalance;
use barrier_lb::workload::{DecodeDistribution, DriftSpec, PrefillDistribution};

fn imbalance(horizon: usize, lookahead: LookaheadMode) -> barrier_lb::Result<f64> {
    let config = SimConfig {
        workers: 8,
        batch: 16,
        horizon,
        lookahead,
        max_steps: 3000,
        seed: 3,
        ..SimConfig::default()
    };
    let pool = OverloadedSpec {
        prefill: PrefillDistribution::Uniform { s_max: 64 },
        decode: DecodeDistribution::Geometric { p: 0.02 },
        drift: DriftSpec::unit(),
        min_pool: 128,
    };
    let result = Simulation::new(config, pool)?.run_to_end()?;
    avg_imbalance(&result.steps[200..])
}

fn main() -> barrier_lb::Result<()> {
    println!("{:>4} {:>10} {:>12} {:>10}", "H", "perfect", "noisy(s=5)", "truncated");
    for h in [0, 5, 10, 20, 40, 60] {
        println!(
            "{h:>4} {:>10.1} {:>12.1} {:>10.1}",
            imbalance(h, LookaheadMode::Perfect)?,
            imbalance(h, LookaheadMode::Noisy { sigma: 5.0 })?,
            imbalance(h, LookaheadMode::Truncated)?
        );
    }
    Ok(())
}
