//! Per-step assignment policies.
//!
//! Every policy sees the same [`StepView`]: free slots and active counts per
//! worker, the predicted load trajectory of the requests already running, and
//! the waiting queue in arrival order. It returns an [`Allocation`] that fills
//! `U(k) = min(|waiting|, Σ free slots)` slots.
//!
//! * `fcfs` pops the oldest request onto the worker with the most free slots.
//! * `jsq` places the oldest request on the worker running the fewest requests.
//! * `bfio-exact` enumerates every feasible allocation and keeps the one with
//!   the smallest accumulated imbalance over the lookahead window.
//! * `bfio-greedy` is a polynomial-time surrogate of the exact search.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lookahead::LookaheadView;
use crate::metrics::imbalance;
use crate::workload::WorkloadProfile;

/// Index of a request in the engine's request table.
pub type RequestId = usize;

pub const DEFAULT_SEARCH_LIMIT: u128 = 200_000;
pub const DEFAULT_CANDIDATE_WINDOW: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    Fcfs,
    Jsq,
    BfioExact,
    BfioGreedy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::Fcfs, Self::Jsq, Self::BfioExact, Self::BfioGreedy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fcfs => "fcfs",
            Self::Jsq => "jsq",
            Self::BfioExact => "bfio-exact",
            Self::BfioGreedy => "bfio-greedy",
        }
    }

    pub fn is_bfio(self) -> bool {
        matches!(self, Self::BfioExact | Self::BfioGreedy)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}` (expected fcfs, jsq, bfio-exact, bfio-greedy)")))
    }
}

/// One step's request → worker assignment, listed in waiting-queue order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    assignments: Vec<(RequestId, usize)>,
}

impl Allocation {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds an allocation, ordering entries by their position in `waiting`.
    pub fn from_pairs(waiting: &[RequestId], mut pairs: Vec<(RequestId, usize)>) -> Self {
        let pos = |id: RequestId| waiting.iter().position(|w| *w == id).unwrap_or(usize::MAX);
        pairs.sort_by_key(|(id, _)| pos(*id));
        Self { assignments: pairs }
    }

    pub fn assignments(&self) -> &[(RequestId, usize)] {
        &self.assignments
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn worker_of(&self, id: RequestId) -> Option<usize> {
        self.assignments.iter().find(|(r, _)| *r == id).map(|(_, g)| *g)
    }

    /// Per-waiting-position worker index, `None` when not admitted.
    pub fn vector(&self, waiting: &[RequestId]) -> Vec<Option<usize>> {
        waiting.iter().map(|id| self.worker_of(*id)).collect()
    }

    /// Checks the integer-program constraints: membership, disjointness,
    /// per-worker capacity and full utilization.
    pub fn validate(&self, waiting: &[RequestId], caps: &[usize]) -> Result<()> {
        let mut used = vec![0usize; caps.len()];
        let mut seen = std::collections::HashSet::new();
        for (id, g) in &self.assignments {
            if !waiting.contains(id) {
                return Err(Error::PolicyContract(format!("request {id} is not waiting")));
            }
            if !seen.insert(*id) {
                return Err(Error::PolicyContract(format!("request {id} assigned twice")));
            }
            let slot = used
                .get_mut(*g)
                .ok_or_else(|| Error::PolicyContract(format!("worker {g} does not exist")))?;
            *slot += 1;
            if *slot > caps[*g] {
                return Err(Error::PolicyContract(format!("worker {g} over capacity ({} > {})", slot, caps[*g])));
            }
        }
        let target = slots_to_fill(waiting.len(), caps);
        if self.assignments.len() != target {
            return Err(Error::PolicyContract(format!(
                "{} requests admitted, {target} slots must be filled",
                self.assignments.len()
            )));
        }
        Ok(())
    }
}

/// `U(k) = min(|waiting|, Σ_g cap[g])`.
pub fn slots_to_fill(waiting: usize, caps: &[usize]) -> usize {
    waiting.min(caps.iter().sum())
}

/// Snapshot of one step as seen by a policy.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub caps: &'a [usize],
    pub active_counts: &'a [usize],
    /// Per worker, the load of already-running requests for `h = 0..=H`.
    pub base: &'a [Vec<f64>],
    pub waiting: &'a [RequestId],
    /// Indexed by [`RequestId`].
    pub profiles: &'a [WorkloadProfile],
    pub lookahead: &'a LookaheadView,
}

impl StepView<'_> {
    pub fn workers(&self) -> usize {
        self.caps.len()
    }

    pub fn horizon(&self) -> usize {
        self.lookahead.horizon
    }

    /// Trajectory `h = 0..=H` of a waiting request if admitted now.
    pub fn candidate(&self, id: RequestId) -> Vec<f64> {
        self.lookahead.trajectory(id, &self.profiles[id], 0)
    }
}

/// Load vectors for `h = 0..=H` (each with one entry per worker) after
/// applying `allocation`. No refills of vacated slots are assumed.
pub fn predict_loads(view: &StepView<'_>, allocation: &Allocation) -> Vec<Vec<f64>> {
    let h_len = view.horizon() + 1;
    let mut vectors: Vec<Vec<f64>> = (0..h_len).map(|h| view.base.iter().map(|b| b[h]).collect()).collect();
    for (id, g) in allocation.assignments() {
        for (h, w) in view.candidate(*id).into_iter().enumerate() {
            vectors[h][*g] += w;
        }
    }
    vectors
}

/// `J = Σ_h Imbalance(k + h)` over the window.
pub fn horizon_cost(load_vectors: &[Vec<f64>]) -> f64 {
    load_vectors.iter().map(|v| imbalance(v)).sum()
}

/// Oldest request first, onto the worker with the most free slots (lowest index on ties).
pub fn fcfs_assign(waiting: &[RequestId], caps: &[usize]) -> Allocation {
    let mut caps = caps.to_vec();
    let mut out = Vec::new();
    if caps.iter().sum::<usize>() == 0 || waiting.is_empty() {
        return Allocation::empty();
    }
    for id in waiting {
        let (g, free) = caps
            .iter()
            .enumerate()
            .fold((0, 0), |best, (g, c)| if *c > best.1 { (g, *c) } else { best });
        if free == 0 {
            break;
        }
        caps[g] -= 1;
        out.push((*id, g));
    }
    Allocation { assignments: out }
}

/// Oldest request first, onto the free-slot worker with the fewest running requests.
pub fn jsq_assign(waiting: &[RequestId], active_counts: &[usize], caps: &[usize]) -> Allocation {
    let mut counts = active_counts.to_vec();
    let mut caps = caps.to_vec();
    let mut out = Vec::new();
    for id in waiting {
        let Some(g) = (0..caps.len()).filter(|g| caps[*g] > 0).min_by_key(|g| (counts[*g], *g)) else {
            break;
        };
        caps[g] -= 1;
        counts[g] += 1;
        out.push((*id, g));
    }
    Allocation { assignments: out }
}

/// Number of allocations that fill `slots` of `n` waiting requests into
/// workers with the given free capacities (saturating).
pub fn feasible_allocation_count(n: usize, caps: &[usize]) -> u128 {
    let u = slots_to_fill(n, caps);
    // ways[t]: ordered placements of t labelled requests into the workers seen so far
    let mut ways = vec![0u128; u + 1];
    ways[0] = 1;
    for &cap in caps {
        let mut next = vec![0u128; u + 1];
        for (t, slot) in next.iter_mut().enumerate() {
            for j in 0..=cap.min(t) {
                let term = ways[t - j].saturating_mul(binomial(t as u64, j as u64));
                *slot = slot.saturating_add(term);
            }
        }
        ways = next;
    }
    binomial(n as u64, u as u64).saturating_mul(ways[u])
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

/// Exact minimizer of the window cost over all feasible allocations. Ties go
/// to the lexicographically smallest assignment vector, where each waiting
/// request (in order) maps to its worker index and "not admitted" sorts last.
pub fn bfio_assign_exact(view: &StepView<'_>, search_limit: u128) -> Result<Allocation> {
    let n = view.waiting.len();
    let count = feasible_allocation_count(n, view.caps);
    if count > search_limit {
        return Err(Error::CapacityExceeded { count, limit: search_limit });
    }
    let u = slots_to_fill(n, view.caps);
    if u == 0 {
        return Ok(Allocation::empty());
    }

    let g_count = view.workers();
    let h_len = view.horizon() + 1;
    let trajectories: Vec<Vec<f64>> = view.waiting.iter().map(|id| view.candidate(*id)).collect();
    // loads[depth] = base plus the placements of the first `depth` requests
    let mut loads = vec![vec![0.0; g_count * h_len]; n + 1];
    for g in 0..g_count {
        loads[0][g * h_len..(g + 1) * h_len].copy_from_slice(&view.base[g][..h_len]);
    }

    let mut search = ExactSearch {
        g_count,
        h_len,
        trajectories: &trajectories,
        caps: view.caps.to_vec(),
        choice: vec![None; n],
        best: None,
    };
    search.descend(0, u, &mut loads);
    let (_, choice) = search.best.expect("at least one feasible allocation");
    let pairs = view
        .waiting
        .iter()
        .zip(choice)
        .filter_map(|(id, g)| g.map(|g| (*id, g)))
        .collect();
    Ok(Allocation { assignments: pairs })
}

struct ExactSearch<'a> {
    g_count: usize,
    h_len: usize,
    trajectories: &'a [Vec<f64>],
    caps: Vec<usize>,
    choice: Vec<Option<usize>>,
    best: Option<(f64, Vec<Option<usize>>)>,
}

impl ExactSearch<'_> {
    fn descend(&mut self, depth: usize, need: usize, loads: &mut [Vec<f64>]) {
        let n = self.choice.len();
        if need == 0 || depth == n {
            if need == 0 {
                let cost = self.cost(&loads[depth]);
                // visited in lexicographic order, so only strict improvements replace
                if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                    let mut choice = self.choice.clone();
                    choice[depth..].fill(None);
                    self.best = Some((cost, choice));
                }
            }
            return;
        }
        for g in 0..self.g_count {
            if self.caps[g] == 0 {
                continue;
            }
            self.caps[g] -= 1;
            self.choice[depth] = Some(g);
            let (head, tail) = loads.split_at_mut(depth + 1);
            let next = &mut tail[0];
            next.copy_from_slice(&head[depth]);
            for (h, w) in self.trajectories[depth].iter().enumerate() {
                next[g * self.h_len + h] += w;
            }
            self.descend(depth + 1, need - 1, loads);
            self.caps[g] += 1;
        }
        if n - depth > need {
            self.choice[depth] = None;
            let (head, tail) = loads.split_at_mut(depth + 1);
            tail[0].copy_from_slice(&head[depth]);
            self.descend(depth + 1, need, loads);
        }
    }

    fn cost(&self, flat: &[f64]) -> f64 {
        (0..self.h_len)
            .map(|h| {
                let mut max = f64::NEG_INFINITY;
                let mut sum = 0.0;
                for g in 0..self.g_count {
                    let l = flat[g * self.h_len + h];
                    max = max.max(l);
                    sum += l;
                }
                self.g_count as f64 * max - sum
            })
            .sum()
    }
}

/// Running window state for the greedy surrogate.
struct Window {
    g_count: usize,
    h_len: usize,
    /// `loads[g][h]`
    loads: Vec<Vec<f64>>,
    max: Vec<f64>,
    caps: Vec<usize>,
}

impl Window {
    fn new(view: &StepView<'_>) -> Self {
        let h_len = view.horizon() + 1;
        let loads: Vec<Vec<f64>> = view.base.iter().map(|b| b[..h_len].to_vec()).collect();
        let max = (0..h_len)
            .map(|h| loads.iter().map(|l| l[h]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Self {
            g_count: view.workers(),
            h_len,
            loads,
            max,
            caps: view.caps.to_vec(),
        }
    }

    /// Growth of `G · max` over the window if `traj` joins worker `g`.
    fn max_growth(&self, g: usize, traj: &[f64]) -> f64 {
        let mut growth = 0.0;
        for ((base, w), top) in self.loads[g].iter().zip(traj).zip(&self.max) {
            let l = base + w;
            if l > *top {
                growth += l - top;
            }
        }
        self.g_count as f64 * growth
    }

    /// Full change in `J`.
    fn delta_cost(&self, g: usize, traj: &[f64]) -> f64 {
        self.max_growth(g, traj) - traj.iter().sum::<f64>()
    }

    fn window_load(&self, g: usize) -> f64 {
        self.loads[g].iter().sum()
    }

    fn place(&mut self, g: usize, traj: &[f64]) {
        self.caps[g] -= 1;
        for ((l, w), top) in self.loads[g].iter_mut().zip(traj).zip(self.max.iter_mut()) {
            *l += w;
            *top = top.max(*l);
        }
    }

    /// Free-slot worker minimizing the cost increase, then the window load,
    /// then the index.
    fn best_worker(&self, traj: &[f64]) -> usize {
        (0..self.g_count)
            .filter(|g| self.caps[*g] > 0)
            .map(|g| (self.max_growth(g, traj), self.window_load(g), g))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
            .map(|(_, _, g)| g)
            .expect("a worker with a free slot")
    }

    fn cost(&self) -> f64 {
        (0..self.h_len)
            .map(|h| self.g_count as f64 * self.max[h] - self.loads.iter().map(|l| l[h]).sum::<f64>())
            .sum()
    }
}

/// Longest-first placement of a fixed admitted set. Returns the cost and the
/// worker of each entry of `chosen`.
fn lpt_place(view: &StepView<'_>, trajectories: &[Vec<f64>], chosen: &[usize]) -> (f64, Vec<usize>) {
    let mut order: Vec<usize> = (0..chosen.len()).collect();
    // stable: equal first-step workloads keep waiting order
    order.sort_by(|a, b| trajectories[chosen[*b]][0].total_cmp(&trajectories[chosen[*a]][0]));
    let mut window = Window::new(view);
    let mut workers = vec![0; chosen.len()];
    for i in order {
        let traj = &trajectories[chosen[i]];
        let g = window.best_worker(traj);
        window.place(g, traj);
        workers[i] = g;
    }
    (window.cost(), workers)
}

/// Greedy surrogate of the exact search.
///
/// Candidates are the oldest `max(U, candidate_window)` waiting requests. When
/// exactly `U` candidates exist they are all admitted and placed longest-first
/// on the worker with the smallest increase of the window cost. Otherwise the
/// admitted set is chosen slot by slot: the free worker with the lightest
/// window load takes the candidate with the best cost change. That set is then
/// also re-placed longest-first, and the cheaper of the two placements wins.
pub fn bfio_assign_greedy(view: &StepView<'_>, candidate_window: usize) -> Allocation {
    let u = slots_to_fill(view.waiting.len(), view.caps);
    if u == 0 {
        return Allocation::empty();
    }
    let window_len = view.waiting.len().min(candidate_window.max(u));
    let candidates = &view.waiting[..window_len];
    let trajectories: Vec<Vec<f64>> = candidates.iter().map(|id| view.candidate(*id)).collect();

    let assemble = |chosen: &[usize], workers: &[usize]| {
        let mut pairs: Vec<(usize, usize)> = chosen.iter().zip(workers).map(|(c, g)| (*c, *g)).collect();
        pairs.sort_unstable();
        Allocation {
            assignments: pairs.into_iter().map(|(c, g)| (candidates[c], g)).collect(),
        }
    };

    if window_len == u {
        let chosen: Vec<usize> = (0..u).collect();
        let (_, workers) = lpt_place(view, &trajectories, &chosen);
        return assemble(&chosen, &workers);
    }

    let mut window = Window::new(view);
    let mut taken = vec![false; window_len];
    let mut chosen = Vec::with_capacity(u);
    let mut workers = Vec::with_capacity(u);
    for _ in 0..u {
        let g = (0..window.g_count)
            .filter(|g| window.caps[*g] > 0)
            .min_by(|a, b| window.window_load(*a).total_cmp(&window.window_load(*b)).then(a.cmp(b)))
            .expect("free slot remains");
        let c = (0..window_len)
            .filter(|c| !taken[*c])
            .min_by(|a, b| {
                window
                    .delta_cost(g, &trajectories[*a])
                    .total_cmp(&window.delta_cost(g, &trajectories[*b]))
                    .then(a.cmp(b))
            })
            .expect("candidate remains");
        taken[c] = true;
        window.place(g, &trajectories[c]);
        chosen.push(c);
        workers.push(g);
    }
    let (lpt_cost, lpt_workers) = lpt_place(view, &trajectories, &chosen);
    if lpt_cost <= window.cost() {
        assemble(&chosen, &lpt_workers)
    } else {
        assemble(&chosen, &workers)
    }
}

/// A configured policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub search_limit: u128,
    pub candidate_window: usize,
}

impl Policy {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            search_limit: DEFAULT_SEARCH_LIMIT,
            candidate_window: DEFAULT_CANDIDATE_WINDOW,
        }
    }

    pub fn assign(&self, view: &StepView<'_>) -> Result<Allocation> {
        match self.kind {
            PolicyKind::Fcfs => Ok(fcfs_assign(view.waiting, view.caps)),
            PolicyKind::Jsq => Ok(jsq_assign(view.waiting, view.active_counts, view.caps)),
            PolicyKind::BfioExact => bfio_assign_exact(view, self.search_limit),
            PolicyKind::BfioGreedy => Ok(bfio_assign_greedy(view, self.candidate_window)),
        }
    }
}
