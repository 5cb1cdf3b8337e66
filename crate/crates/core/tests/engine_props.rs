use std::collections::HashMap;

use barrier_lb::engine::{SimConfig, Simulation, STEP_OVERHEAD_S};
use barrier_lb::policies::PolicyKind;
use barrier_lb::workload::{sample_instance, DecodeDistribution, DriftSpec, PrefillDistribution};
use proptest::prelude::*;

fn policy_strategy() -> impl Strategy<Value = PolicyKind> {
    prop_oneof![
        Just(PolicyKind::Fcfs),
        Just(PolicyKind::Jsq),
        Just(PolicyKind::BfioGreedy),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn runs_respect_capacity_stickiness_and_timing(
        seed in any::<u64>(),
        workers in 1usize..5,
        batch in 1usize..4,
        horizon in 0usize..4,
        rate in 1.0f64..200.0,
        drift in prop_oneof![Just(0.0), Just(1.0), Just(2.5)],
        policy in policy_strategy(),
    ) {
        let instance = sample_instance(
            &PrefillDistribution::Uniform { s_max: 50 },
            &DecodeDistribution::Geometric { p: 0.2 },
            rate,
            0.5,
            seed,
        )
        .unwrap()
        .with_drift(DriftSpec::constant(drift))
        .unwrap();
        let expected = instance.total_workload().unwrap();
        let config = SimConfig { workers, batch, horizon, policy, seed, ..SimConfig::default() };
        let mut sim = Simulation::new(config, instance.clone()).unwrap();
        let mut home: HashMap<usize, usize> = HashMap::new();
        let mut last_clock = -1.0;
        while !sim.is_done() {
            let rec = sim.advance().unwrap();
            prop_assert!(rec.clock_start > last_clock);
            prop_assert!(rec.dt >= STEP_OVERHEAD_S);
            last_clock = rec.clock_start;
            prop_assert!(rec.active_count <= workers * batch);
            for (g, w) in sim.workers().iter().enumerate() {
                prop_assert!(w.active.len() <= batch);
                for id in &w.active {
                    prop_assert_eq!(*home.entry(*id).or_insert(g), g);
                }
            }
            for id in &rec.admitted {
                home.entry(*id).or_insert(sim.requests()[*id].worker.unwrap());
            }
        }
        let result = sim.into_result();
        prop_assert!(result.completed_all);
        prop_assert!((result.executed_workload() - expected).abs() <= 1e-9 * expected.max(1.0));
        for r in &result.requests {
            let (start, finish) = (r.start_step.unwrap(), r.finish_step.unwrap());
            prop_assert_eq!(finish - start + 1, r.decode);
            prop_assert!(r.start_clock.unwrap() >= r.arrival_time);
            prop_assert!(r.finish_clock.unwrap() > r.start_clock.unwrap());
        }
    }

    #[test]
    fn step_loads_sum_of_active_workloads(seed in any::<u64>(), policy in policy_strategy()) {
        let instance = sample_instance(
            &PrefillDistribution::Uniform { s_max: 20 },
            &DecodeDistribution::Fixed(4),
            50.0,
            0.2,
            seed,
        )
        .unwrap();
        let config = SimConfig { workers: 3, batch: 2, policy, ..SimConfig::default() };
        let result = Simulation::new(config, instance).unwrap().run_to_end().unwrap();
        for s in &result.steps {
            let max = s.loads.iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(s.max_load, max);
            prop_assert!((s.dt - (STEP_OVERHEAD_S + 1.005e-7 * max)).abs() < 1e-15);
        }
    }
}
