//! Independent references for validating the policies.
//!
//! [`enumerate_allocations`] and [`brute_force_best`] list every feasible
//! allocation explicitly (choose the admitted subset, then every worker map)
//! and share no search code with [`crate::policies`]. [`estimate_iir`] runs
//! seeded Monte-Carlo comparisons of FCFS against BF-IO on overloaded pools.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ArrivalSource, OverloadedSpec, SimConfig, Simulation};
use crate::error::{Error, Result};
use crate::metrics::avg_imbalance;
use crate::policies::{Allocation, PolicyKind, RequestId, StepView};
use crate::workload::{DecodeDistribution, DriftSpec, PrefillDistribution};

/// Every allocation that fills `min(|waiting|, Σ caps)` slots within the
/// capacities, each exactly once, sorted lexicographically by assignment
/// vector ("not admitted" after every worker index).
pub fn enumerate_allocations(waiting: &[RequestId], caps: &[usize], limit: usize) -> Result<Vec<Allocation>> {
    let workers = caps.len();
    let u = waiting.len().min(caps.iter().sum());
    let mut vectors: Vec<Vec<usize>> = Vec::new();
    for subset in (0..waiting.len()).combinations(u) {
        for targets in std::iter::repeat_n(0..workers, u).multi_cartesian_product() {
            let mut used = vec![0usize; workers];
            targets.iter().for_each(|g| used[*g] += 1);
            if used.iter().zip(caps).any(|(n, c)| n > c) {
                continue;
            }
            let mut vector = vec![workers; waiting.len()];
            for (pos, g) in subset.iter().zip(&targets) {
                vector[*pos] = *g;
            }
            vectors.push(vector);
            if vectors.len() > limit {
                return Err(Error::CapacityExceeded {
                    count: vectors.len() as u128,
                    limit: limit as u128,
                });
            }
        }
    }
    vectors.sort();
    Ok(vectors
        .into_iter()
        .map(|v| {
            let pairs = waiting
                .iter()
                .zip(v)
                .filter(|(_, g)| *g < workers)
                .map(|(id, g)| (*id, g))
                .collect();
            Allocation::from_pairs(waiting, pairs)
        })
        .collect())
}

/// Window cost recomputed from scratch for one allocation.
pub fn window_cost(view: &StepView<'_>, allocation: &Allocation) -> f64 {
    let workers = view.caps.len();
    let mut total = 0.0;
    for h in 0..=view.lookahead.horizon {
        let mut loads: Vec<f64> = (0..workers).map(|g| view.base[g][h]).collect();
        for (id, g) in allocation.assignments() {
            let profile = &view.profiles[*id];
            let w = if h == 0 {
                profile.at(0)
            } else {
                view.lookahead.predict(*id, profile, 0)[h - 1]
            };
            loads[*g] += w;
        }
        let max = loads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += workers as f64 * max - loads.iter().sum::<f64>();
    }
    total
}

/// Global minimum of the window cost by exhaustive listing; the first
/// minimizer in lexicographic order wins.
pub fn brute_force_best(view: &StepView<'_>, limit: usize) -> Result<(Allocation, f64)> {
    let all = enumerate_allocations(view.waiting, view.caps, limit)?;
    let mut best: Option<(Allocation, f64)> = None;
    for a in all {
        let cost = window_cost(view, &a);
        match &best {
            Some((_, b)) if cost >= *b => {}
            _ => best = Some((a, cost)),
        }
    }
    Ok(best.expect("enumeration always yields at least one allocation"))
}

/// Workload and run length of an IIR experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirSpec {
    pub prefill: PrefillDistribution,
    pub decode: DecodeDistribution,
    pub drift: DriftSpec,
    /// Minimum waiting pool, in multiples of `G·B`.
    pub pool_rounds: usize,
    pub steps: u64,
    pub warmup: u64,
    pub bfio: PolicyKind,
    pub horizon: usize,
    /// Timing, power and solver settings; workers, batch, policy and seed are set per run.
    pub base: SimConfig,
}

impl Default for IirSpec {
    fn default() -> Self {
        Self {
            prefill: PrefillDistribution::Uniform { s_max: 64 },
            decode: DecodeDistribution::Geometric { p: 0.02 },
            drift: DriftSpec::unit(),
            pool_rounds: 1,
            steps: 2000,
            warmup: 200,
            bfio: PolicyKind::BfioGreedy,
            horizon: 0,
            base: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirCell {
    pub batch: usize,
    pub workers: usize,
    pub fcfs_mean: f64,
    pub bfio_mean: f64,
    pub fcfs_stderr: f64,
    pub bfio_stderr: f64,
    /// `fcfs_mean / bfio_mean`; 1 when neither policy has any imbalance.
    pub ratio: f64,
    pub stderr: f64,
    pub trials: usize,
    /// BF-IO had zero imbalance while FCFS did not.
    pub infinite: bool,
    /// `√G ≥ B`, outside the regime the scaling law assumes.
    pub outside_regime: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirEstimate {
    pub cells: Vec<IirCell>,
    pub trials: usize,
    pub seed: u64,
}

pub const IIR_CSV_HEADER: &str = "B,G,fcfs_mean,bfio_mean,ratio,stderr,trials";

impl IirEstimate {
    pub fn cell(&self, batch: usize, workers: usize) -> Option<&IirCell> {
        self.cells.iter().find(|c| c.batch == batch && c.workers == workers)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{IIR_CSV_HEADER}\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.batch, c.workers, c.fcfs_mean, c.bfio_mean, c.ratio, c.stderr, c.trials
            ));
        }
        out
    }
}

fn trial_seed(seed: u64, batch: usize, workers: usize, trial: usize) -> u64 {
    let mut z = seed
        ^ (batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (workers as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (trial as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z ^ (z >> 33)
}

/// Average imbalance after warm-up of one seeded overloaded run.
pub fn overloaded_avg_imbalance(
    spec: &IirSpec,
    batch: usize,
    workers: usize,
    policy: PolicyKind,
    seed: u64,
) -> Result<f64> {
    let config = SimConfig {
        workers,
        batch,
        policy,
        horizon: if policy.is_bfio() { spec.horizon } else { 0 },
        seed,
        max_steps: spec.warmup + spec.steps,
        ..spec.base.clone()
    };
    let source = ArrivalSource::Overloaded(OverloadedSpec {
        prefill: spec.prefill.clone(),
        decode: spec.decode.clone(),
        drift: spec.drift.clone(),
        min_pool: spec.pool_rounds * workers * batch,
    });
    let result = Simulation::new(config, source)?.run_to_end()?;
    avg_imbalance(&result.steps[spec.warmup as usize..])
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo estimate of the FCFS / BF-IO imbalance ratio on each `(B, G)` cell.
pub fn estimate_iir(grid: &[(usize, usize)], spec: &IirSpec, trials: usize, seed: u64) -> Result<IirEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty (B, G) grid".into()));
    }
    let jobs: Vec<(usize, usize, usize, PolicyKind)> = grid
        .iter()
        .flat_map(|&(b, g)| (0..trials).flat_map(move |t| [(b, g, t, PolicyKind::Fcfs), (b, g, t, spec.bfio)]))
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(b, g, t, policy)| overloaded_avg_imbalance(spec, b, g, policy, trial_seed(seed, b, g, t)))
        .collect::<Result<_>>()?;

    let cells = grid
        .iter()
        .enumerate()
        .map(|(i, &(batch, workers))| {
            let chunk = &values[i * 2 * trials..(i + 1) * 2 * trials];
            let fcfs: Vec<f64> = chunk.iter().step_by(2).copied().collect();
            let bfio: Vec<f64> = chunk.iter().skip(1).step_by(2).copied().collect();
            let (fcfs_mean, fcfs_stderr) = mean_and_stderr(&fcfs);
            let (bfio_mean, bfio_stderr) = mean_and_stderr(&bfio);
            let (ratio, stderr, infinite) = if bfio_mean > 0.0 {
                let r = fcfs_mean / bfio_mean;
                let rel = (fcfs_stderr / fcfs_mean.max(f64::MIN_POSITIVE)).powi(2) + (bfio_stderr / bfio_mean).powi(2);
                (r, r * rel.sqrt(), false)
            } else if fcfs_mean > 0.0 {
                (f64::INFINITY, f64::NAN, true)
            } else {
                (1.0, 0.0, false)
            };
            IirCell {
                batch,
                workers,
                fcfs_mean,
                bfio_mean,
                fcfs_stderr,
                bfio_stderr,
                ratio,
                stderr,
                trials,
                infinite,
                outside_regime: (workers as f64).sqrt() >= batch as f64,
            }
        })
        .collect();
    Ok(IirEstimate { cells, trials, seed })
}
