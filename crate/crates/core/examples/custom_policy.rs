//! Plugging a hand-written allocation rule into the engine with
//! `Simulation::advance_with`: here, "largest prompt to the lightest worker".

use barrier_lb::engine::{OverloadedSpec, SimConfig, Simulation};
use barrier_lb::metrics::avg_imbalance;
use barrier_lb::policies::{slots_to_fill, Allocation, StepView};
use barrier_lb::workload::{DecodeDistribution, DriftSpec, PrefillDistribution};

fn largest_to_lightest(view: &StepView<'_>) -> barrier_lb::Result<Allocation> {
    let mut loads: Vec<f64> = view.base.iter().map(|b| b[0]).collect();
    let mut free = view.caps.to_vec();
    let mut order = view.waiting.to_vec();
    order.sort_by(|a, b| view.profiles[*b].first().total_cmp(&view.profiles[*a].first()));
    let mut pairs = Vec::new();
    for id in order.into_iter().take(slots_to_fill(view.waiting.len(), view.caps)) {
        let g = (0..loads.len())
            .filter(|g| free[*g] > 0)
            .min_by(|a, b| loads[*a].total_cmp(&loads[*b]))
            .expect("a free slot remains");
        loads[g] += view.profiles[id].first();
        free[g] -= 1;
        pairs.push((id, g));
    }
    Ok(Allocation::from_pairs(view.waiting, pairs))
}

fn main() -> barrier_lb::Result<()> {
    let config = SimConfig {
        workers: 8,
        batch: 16,
        max_steps: 3000,
        ..SimConfig::default()
    };
    let pool = OverloadedSpec {
        prefill: PrefillDistribution::Uniform { s_max: 64 },
        decode: DecodeDistribution::Geometric { p: 0.02 },
        drift: DriftSpec::unit(),
        min_pool: 128,
    };

    let mut custom = Simulation::new(config.clone(), pool.clone())?;
    for _ in 0..config.max_steps {
        custom.advance_with(largest_to_lightest)?;
    }
    let builtin = Simulation::new(config, pool)?.run_to_end()?;

    println!("largest-to-lightest: {:.1}", avg_imbalance(custom.history())?);
    println!("bfio-greedy:         {:.1}", avg_imbalance(&builtin.steps)?);
    Ok(())
}
