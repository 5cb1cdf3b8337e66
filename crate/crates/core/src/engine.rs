//! Step-indexed simulation of barrier-synchronized workers.
//!
//! Each call to [`Simulation::advance`] executes one decode step in a fixed
//! order: reveal arrivals, ask the policy for an allocation, admit, compute
//! loads, advance the clock by `C + t_ell · max load`, then advance progress
//! and retire finished requests. Slots freed by completions become available
//! at the next step.

use std::collections::{HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lookahead::{LookaheadMode, LookaheadView};
use crate::metrics::PowerModel;
use crate::policies::{
    Allocation, Policy, PolicyKind, RequestId, StepView, DEFAULT_CANDIDATE_WINDOW, DEFAULT_SEARCH_LIMIT,
};
use crate::workload::{
    is_overloaded_at, ArrivalInstance, DecodeDistribution, DriftSpec, PrefillDistribution, RequestSpec,
    WorkloadProfile,
};

/// Fixed per-step overhead in seconds, fitted on production traces.
pub const STEP_OVERHEAD_S: f64 = 9.775e-3;
/// Per-token latency in seconds.
pub const PER_TOKEN_LATENCY_S: f64 = 1.005e-7;
pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub workers: usize,
    pub batch: usize,
    pub overhead: f64,
    pub per_token: f64,
    pub horizon: usize,
    pub policy: PolicyKind,
    pub max_steps: u64,
    pub seed: u64,
    pub power: PowerModel,
    pub lookahead: LookaheadMode,
    pub search_limit: u128,
    pub candidate_window: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            batch: 16,
            overhead: STEP_OVERHEAD_S,
            per_token: PER_TOKEN_LATENCY_S,
            horizon: 0,
            policy: PolicyKind::BfioGreedy,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            power: PowerModel::default(),
            lookahead: LookaheadMode::Perfect,
            search_limit: DEFAULT_SEARCH_LIMIT,
            candidate_window: DEFAULT_CANDIDATE_WINDOW,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.workers == 0 {
            return fail("workers must be >= 1");
        }
        if self.batch == 0 {
            return fail("batch must be >= 1");
        }
        if !(self.overhead.is_finite() && self.overhead >= 0.0) {
            return fail("overhead must be >= 0");
        }
        if !(self.per_token.is_finite() && self.per_token > 0.0) {
            return fail("per_token latency must be > 0");
        }
        if self.max_steps == 0 {
            return fail("max_steps must be >= 1");
        }
        if self.candidate_window == 0 {
            return fail("candidate_window must be >= 1");
        }
        if let LookaheadMode::Noisy { sigma } = self.lookahead {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return fail("lookahead noise must be >= 0");
            }
        }
        self.power.validate()
    }

    pub fn policy(&self) -> Policy {
        Policy {
            kind: self.policy,
            search_limit: self.search_limit,
            candidate_window: self.candidate_window,
        }
    }
}

/// `C + t_ell · max_load`.
pub fn step_duration(max_load: f64, config: &SimConfig) -> f64 {
    config.overhead + config.per_token * max_load
}

/// Endless arrivals that keep the waiting pool overloaded: before each step
/// fresh requests are added until the pool, minus its largest prefill class,
/// covers every free slot and holds at least `min_pool` requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverloadedSpec {
    pub prefill: PrefillDistribution,
    pub decode: DecodeDistribution,
    pub drift: DriftSpec,
    pub min_pool: usize,
}

impl OverloadedSpec {
    pub fn validate(&self) -> Result<()> {
        self.prefill.validate()?;
        self.decode.validate()?;
        self.drift.validate()?;
        let single_class = match &self.prefill {
            PrefillDistribution::Uniform { s_max } => *s_max < 2,
            PrefillDistribution::Fixed(_) => true,
            PrefillDistribution::Empirical(v) => v.iter().all(|s| *s == v[0]),
        };
        if single_class {
            return Err(Error::Config(
                "an overloaded pool needs at least two prefill classes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArrivalSource {
    Instance(ArrivalInstance),
    Overloaded(OverloadedSpec),
}

impl ArrivalSource {
    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Instance(_))
    }
}

impl From<ArrivalInstance> for ArrivalSource {
    fn from(instance: ArrivalInstance) -> Self {
        Self::Instance(instance)
    }
}

impl From<OverloadedSpec> for ArrivalSource {
    fn from(spec: OverloadedSpec) -> Self {
        Self::Overloaded(spec)
    }
}

/// Requests running on one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub active: Vec<RequestId>,
    pub capacity: usize,
}

impl WorkerState {
    pub fn free_slots(&self) -> usize {
        self.capacity - self.active.len()
    }
}

/// Sum of the workloads the active requests are about to execute.
pub fn worker_load(worker: &WorkerState, requests: &[RequestState]) -> Result<f64> {
    worker
        .active
        .iter()
        .map(|id| {
            let r = requests
                .get(*id)
                .ok_or_else(|| Error::Internal(format!("unknown request {id}")))?;
            if r.progress >= r.profile.len() {
                return Err(Error::Internal(format!("request {id} is finished but still active")));
            }
            Ok(r.profile.at(r.progress))
        })
        .try_fold(0.0, |acc, w: Result<f64>| Ok(acc + w?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestState {
    pub spec: RequestSpec,
    pub profile: WorkloadProfile,
    pub arrival_step: Option<u64>,
    pub worker: Option<usize>,
    pub start_step: Option<u64>,
    pub start_clock: Option<f64>,
    /// Completed steps `τ_i`.
    pub progress: usize,
    pub finish_step: Option<u64>,
    pub finish_clock: Option<f64>,
}

impl RequestState {
    fn new(spec: RequestSpec, profile: WorkloadProfile) -> Self {
        Self {
            spec,
            profile,
            arrival_step: None,
            worker: None,
            start_step: None,
            start_clock: None,
            progress: 0,
            finish_step: None,
            finish_clock: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    pub clock_start: f64,
    pub dt: f64,
    pub max_load: f64,
    pub active_count: usize,
    pub loads: Vec<f64>,
    pub admitted: Vec<RequestId>,
    pub completed: Vec<RequestId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTiming {
    /// Source id (trace row or generation index).
    pub id: u64,
    pub arrival_time: f64,
    pub arrival_step: Option<u64>,
    pub worker: Option<usize>,
    pub start_step: Option<u64>,
    pub start_clock: Option<f64>,
    pub finish_step: Option<u64>,
    pub finish_clock: Option<f64>,
    pub decode: u64,
}

impl From<&RequestState> for RequestTiming {
    fn from(r: &RequestState) -> Self {
        Self {
            id: r.spec.id,
            arrival_time: r.spec.arrival_time,
            arrival_step: r.arrival_step,
            worker: r.worker,
            start_step: r.start_step,
            start_clock: r.start_clock,
            finish_step: r.finish_step,
            finish_clock: r.finish_clock,
            decode: r.profile.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub steps: Vec<StepRecord>,
    pub requests: Vec<RequestTiming>,
    pub completed_all: bool,
    pub config: SimConfig,
}

impl SimResult {
    /// `Σ_k Σ_g L_g(k)`.
    pub fn executed_workload(&self) -> f64 {
        self.steps.iter().map(|s| s.loads.iter().sum::<f64>()).sum()
    }

    pub fn elapsed(&self) -> f64 {
        self.steps.iter().map(|s| s.dt).sum()
    }
}

/// Per-step CSV header for `workers` workers.
pub fn steps_csv_header(workers: usize) -> String {
    let mut cols: Vec<String> = ["k", "clock_start", "dt", "max_load", "active_count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..workers).map(|g| format!("load_{g}")));
    cols.join(",")
}

pub fn write_steps_csv<W: std::io::Write>(mut out: W, result: &SimResult) -> std::io::Result<()> {
    writeln!(out, "{}", steps_csv_header(result.config.workers))?;
    for s in &result.steps {
        write!(out, "{},{},{},{},{}", s.k, s.clock_start, s.dt, s.max_load, s.active_count)?;
        for l in &s.loads {
            write!(out, ",{l}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Mutable simulation state. One instance owns everything it touches.
pub struct Simulation {
    config: SimConfig,
    policy: Policy,
    source: ArrivalSource,
    requests: Vec<RequestState>,
    profiles: Vec<WorkloadProfile>,
    next_undiscovered: usize,
    waiting: VecDeque<RequestId>,
    workers: Vec<WorkerState>,
    clock: f64,
    k: u64,
    generator: ChaCha8Rng,
    history: Vec<StepRecord>,
}

impl Simulation {
    pub fn new(config: SimConfig, source: impl Into<ArrivalSource>) -> Result<Self> {
        config.validate()?;
        let source = source.into();
        let mut requests = Vec::new();
        let mut profiles = Vec::new();
        match &source {
            ArrivalSource::Instance(instance) => {
                for (i, spec) in instance.requests().iter().enumerate() {
                    let profile = instance.profile(i)?;
                    profiles.push(profile.clone());
                    requests.push(RequestState::new(spec.clone(), profile));
                }
            }
            ArrivalSource::Overloaded(spec) => spec.validate()?,
        }
        let workers = (0..config.workers)
            .map(|_| WorkerState {
                active: Vec::with_capacity(config.batch),
                capacity: config.batch,
            })
            .collect();
        Ok(Self {
            policy: config.policy(),
            generator: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            source,
            requests,
            profiles,
            next_undiscovered: 0,
            waiting: VecDeque::new(),
            workers,
            clock: 0.0,
            k: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn requests(&self) -> &[RequestState] {
        &self.requests
    }

    pub fn waiting(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.waiting.iter().copied()
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    /// All requests of a finite source have finished.
    pub fn is_done(&self) -> bool {
        match self.source {
            ArrivalSource::Instance(_) => {
                self.next_undiscovered == self.requests.len()
                    && self.waiting.is_empty()
                    && self.workers.iter().all(|w| w.active.is_empty())
            }
            ArrivalSource::Overloaded(_) => false,
        }
    }

    fn reveal(&mut self) -> Result<()> {
        match &self.source {
            ArrivalSource::Instance(_) => {
                while self.next_undiscovered < self.requests.len()
                    && self.requests[self.next_undiscovered].spec.arrival_time <= self.clock
                {
                    self.requests[self.next_undiscovered].arrival_step = Some(self.k);
                    self.waiting.push_back(self.next_undiscovered);
                    self.next_undiscovered += 1;
                }
            }
            ArrivalSource::Overloaded(spec) => {
                let spec = spec.clone();
                let free: usize = self.workers.iter().map(WorkerState::free_slots).sum();
                let s_max = spec.prefill.s_max();
                let mut pool: Vec<(u64, u64)> = self
                    .waiting
                    .iter()
                    .map(|id| (self.requests[*id].spec.prefill, self.requests[*id].spec.decode))
                    .collect();
                let mut classes: HashMap<u64, usize> = HashMap::new();
                for (s, _) in &pool {
                    *classes.entry(*s).or_default() += 1;
                }
                let mut largest = classes.values().copied().max().unwrap_or(0);
                let mut added = 0usize;
                while pool.len() < spec.min_pool || pool.len() - largest < free {
                    let prefill = spec.prefill.sample(&mut self.generator);
                    let decode = spec.decode.sample(&mut self.generator);
                    let c = classes.entry(prefill).or_default();
                    *c += 1;
                    largest = largest.max(*c);
                    pool.push((prefill, decode));
                    added += 1;
                    if added > 10_000_000 {
                        return Err(Error::Internal("overloaded pool top-up does not converge".into()));
                    }
                    let id = self.requests.len();
                    let profile = WorkloadProfile::with_drift(prefill, decode, &spec.drift)?;
                    self.profiles.push(profile.clone());
                    let mut state = RequestState::new(
                        RequestSpec {
                            id: id as u64,
                            arrival_time: self.clock,
                            prefill,
                            decode,
                        },
                        profile,
                    );
                    state.arrival_step = Some(self.k);
                    self.requests.push(state);
                    self.waiting.push_back(id);
                }
                debug_assert!(is_overloaded_at(&pool, free, s_max));
            }
        }
        Ok(())
    }

    /// Executes exactly one step and returns its record.
    pub fn advance(&mut self) -> Result<StepRecord> {
        let policy = self.policy;
        self.advance_with(|view| policy.assign(view))
    }

    /// Executes one step with a caller-supplied allocation rule in place of
    /// the configured policy. The allocation is validated like any other.
    pub fn advance_with<F>(&mut self, assign: F) -> Result<StepRecord>
    where
        F: FnOnce(&StepView<'_>) -> Result<Allocation>,
    {
        let k = self.k;
        let clock_start = self.clock;

        // 1. reveal
        self.reveal()?;

        // 2. policy
        let caps: Vec<usize> = self.workers.iter().map(WorkerState::free_slots).collect();
        let active_counts: Vec<usize> = self.workers.iter().map(|w| w.active.len()).collect();
        let lookahead = LookaheadView {
            horizon: self.config.horizon,
            mode: self.config.lookahead,
            seed: self.config.seed,
            step: k,
        };
        let h_len = self.config.horizon + 1;
        let base: Vec<Vec<f64>> = self
            .workers
            .iter()
            .map(|w| {
                let mut acc = vec![0.0; h_len];
                for id in &w.active {
                    let r = &self.requests[*id];
                    lookahead.accumulate(*id, &r.profile, r.progress, &mut acc);
                }
                acc
            })
            .collect();
        let waiting: &[RequestId] = self.waiting.make_contiguous();
        let view = StepView {
            caps: &caps,
            active_counts: &active_counts,
            base: &base,
            waiting,
            profiles: &self.profiles,
            lookahead: &lookahead,
        };
        let allocation = assign(&view)?;
        allocation.validate(waiting, &caps)?;

        // 3. admit
        let mut admitted = Vec::with_capacity(allocation.len());
        if !allocation.is_empty() {
            let mut is_admitted = vec![false; self.requests.len()];
            for (id, g) in allocation.assignments() {
                is_admitted[*id] = true;
                let r = &mut self.requests[*id];
                r.worker = Some(*g);
                r.start_step = Some(k);
                r.start_clock = Some(clock_start);
                self.workers[*g].active.push(*id);
                admitted.push(*id);
            }
            self.waiting.retain(|id| !is_admitted[*id]);
        }

        // 4. loads
        let loads = self
            .workers
            .iter()
            .map(|w| worker_load(w, &self.requests))
            .collect::<Result<Vec<f64>>>()?;
        let max_load = loads.iter().copied().fold(0.0, f64::max);
        let active_count = active_counts.iter().sum::<usize>() + admitted.len();

        // 5. time
        let dt = step_duration(max_load, &self.config);
        self.clock += dt;

        // 6. progress and completions
        let mut completed = Vec::new();
        for worker in &mut self.workers {
            let requests = &mut self.requests;
            worker.active.retain(|id| {
                let r = &mut requests[*id];
                r.progress += 1;
                if r.progress >= r.profile.len() {
                    r.finish_step = Some(k);
                    r.finish_clock = Some(clock_start + dt);
                    completed.push(*id);
                    false
                } else {
                    true
                }
            });
        }

        self.k += 1;
        let record = StepRecord {
            k,
            clock_start,
            dt,
            max_load,
            active_count,
            loads,
            admitted,
            completed,
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// Runs until every request finishes or `max_steps` steps have executed.
    pub fn run_to_end(mut self) -> Result<SimResult> {
        while !self.is_done() && self.k < self.config.max_steps {
            self.advance()?;
        }
        Ok(self.into_result())
    }

    pub fn into_result(self) -> SimResult {
        SimResult {
            completed_all: self.is_done(),
            requests: self.requests.iter().map(RequestTiming::from).collect(),
            steps: self.history,
            config: self.config,
        }
    }
}

/// Runs one simulation with the policy named in `config`.
pub fn run(config: &SimConfig, source: impl Into<ArrivalSource>) -> Result<SimResult> {
    Simulation::new(config.clone(), source)?.run_to_end()
}
