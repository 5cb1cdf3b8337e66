#![allow(dead_code)]

use barrier_lb::lookahead::LookaheadView;
use barrier_lb::policies::{RequestId, StepView};
use barrier_lb::workload::WorkloadProfile;
use rand::Rng;

/// Owned data behind a `StepView`, built from random integer workloads.
pub struct Step {
    pub caps: Vec<usize>,
    pub active_counts: Vec<usize>,
    pub base: Vec<Vec<f64>>,
    pub waiting: Vec<RequestId>,
    pub profiles: Vec<WorkloadProfile>,
    pub lookahead: LookaheadView,
}

impl Step {
    pub fn view(&self) -> StepView<'_> {
        StepView {
            caps: &self.caps,
            active_counts: &self.active_counts,
            base: &self.base,
            waiting: &self.waiting,
            profiles: &self.profiles,
            lookahead: &self.lookahead,
        }
    }
}

pub fn random_step<R: Rng>(rng: &mut R, max_g: usize, max_b: usize, max_wait: usize, max_h: usize, s_max: u64) -> Step {
    let g = rng.random_range(1..=max_g);
    let b = rng.random_range(1..=max_b);
    let horizon = rng.random_range(0..=max_h);
    let lookahead = LookaheadView::perfect(horizon);
    let mut caps = Vec::new();
    let mut active_counts = Vec::new();
    let mut base = Vec::new();
    for _ in 0..g {
        let active = rng.random_range(0..=b);
        let mut acc = vec![0.0; horizon + 1];
        for j in 0..active {
            let o = rng.random_range(1..=6);
            let p = WorkloadProfile::llm(rng.random_range(1..=s_max), o).unwrap();
            let done = rng.random_range(0..o) as usize;
            lookahead.accumulate(1000 + j, &p, done, &mut acc);
        }
        caps.push(b - active);
        active_counts.push(active);
        base.push(acc);
    }
    let n = rng.random_range(0..=max_wait);
    let profiles = (0..n)
        .map(|_| WorkloadProfile::llm(rng.random_range(1..=s_max), rng.random_range(1..=6)).unwrap())
        .collect();
    Step {
        caps,
        active_counts,
        base,
        waiting: (0..n).collect(),
        profiles,
        lookahead,
    }
}
