//! Requests, workload profiles and arrival instances.
//!
//! A request's cost is described by its [`WorkloadProfile`]: one workload
//! value per processing step. LLM decode profiles start at the prefill length
//! and grow by one token per step; [`DriftSpec`] generalizes the per-step
//! increment.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column header of the trace CSV format.
pub const TRACE_HEADER: [&str; 3] = ["arrival_time", "prefill", "decode"];

/// Per-step workload sequence of one request. Never empty, never negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    steps: Vec<f64>,
}

impl WorkloadProfile {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("workload profile must have at least one step".into()));
        }
        if let Some(bad) = steps.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidArgument(format!("workload entry {bad} is not a finite non-negative value")));
        }
        Ok(Self { steps })
    }

    /// Linear KV-growth profile `(s, s+1, ..., s+o-1)`.
    pub fn llm(prefill: u64, decode: u64) -> Result<Self> {
        check_positive(prefill, decode)?;
        Ok(Self {
            steps: (0..decode).map(|j| (prefill + j) as f64).collect(),
        })
    }

    /// Profile under a shared increment sequence: `w(1) = s`, `w(j) = s + δ_1 + ... + δ_{j-1}`.
    pub fn with_drift(prefill: u64, decode: u64, drift: &DriftSpec) -> Result<Self> {
        check_positive(prefill, decode)?;
        drift.validate()?;
        let mut steps = Vec::with_capacity(decode as usize);
        let mut w = prefill as f64;
        steps.push(w);
        for t in 1..decode as usize {
            w += drift.increment(t)?;
            steps.push(w);
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Number of processing steps `o_i`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Workload of the step after `completed` steps have run, or 0 once finished.
    pub fn at(&self, completed: usize) -> f64 {
        self.steps.get(completed).copied().unwrap_or(0.0)
    }

    pub fn first(&self) -> f64 {
        self.steps[0]
    }

    pub fn total(&self) -> f64 {
        self.steps.iter().sum()
    }
}

fn check_positive(prefill: u64, decode: u64) -> Result<()> {
    if prefill == 0 || decode == 0 {
        return Err(Error::InvalidArgument(format!(
            "prefill and decode must be positive (got s={prefill}, o={decode})"
        )));
    }
    Ok(())
}

/// `(s, s+1, ..., s+o-1)`.
pub fn llm_profile(prefill: u64, decode: u64) -> Result<WorkloadProfile> {
    WorkloadProfile::llm(prefill, decode)
}

pub fn drift_profile(prefill: u64, decode: u64, drift: &DriftSpec) -> Result<WorkloadProfile> {
    WorkloadProfile::with_drift(prefill, decode, drift)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DriftRule {
    /// The same increment at every step. `Constant(1.0)` is LLM decoding.
    Constant(f64),
    /// Explicit increments `δ_1, δ_2, ...`; profiles longer than the list are rejected.
    Custom(Vec<f64>),
}

/// Shared per-step workload increments, indexed by the request's local step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub rule: DriftRule,
    pub delta_max: f64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self::unit()
    }
}

impl DriftSpec {
    pub fn unit() -> Self {
        Self::constant(1.0)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(delta: f64) -> Self {
        Self {
            rule: DriftRule::Constant(delta),
            delta_max: delta.max(0.0),
        }
    }

    pub fn custom(increments: Vec<f64>, delta_max: f64) -> Result<Self> {
        let spec = Self {
            rule: DriftRule::Custom(increments),
            delta_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_max.is_finite() && self.delta_max >= 0.0) {
            return Err(Error::InvalidDrift(format!("delta_max {} must be finite and >= 0", self.delta_max)));
        }
        let check = |d: f64| {
            if d.is_finite() && (0.0..=self.delta_max).contains(&d) {
                Ok(())
            } else {
                Err(Error::InvalidDrift(format!("increment {d} outside [0, {}]", self.delta_max)))
            }
        };
        match &self.rule {
            DriftRule::Constant(d) => check(*d),
            DriftRule::Custom(ds) => ds.iter().try_for_each(|d| check(*d)),
        }
    }

    /// `δ_t` for `t >= 1`.
    pub fn increment(&self, t: usize) -> Result<f64> {
        match &self.rule {
            DriftRule::Constant(d) => Ok(*d),
            DriftRule::Custom(ds) => ds.get(t.wrapping_sub(1)).copied().ok_or_else(|| {
                Error::InvalidDrift(format!("increment δ_{t} requested but only {} given", ds.len()))
            }),
        }
    }
}

/// Prefill (prompt length) distribution supported on `{1, ..., s_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PrefillDistribution {
    Uniform { s_max: u64 },
    Fixed(u64),
    Empirical(Vec<u64>),
}

/// Spread diagnostics of a prefill distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefillValidity {
    pub s_max: u64,
    pub mean: f64,
    pub std_dev: f64,
    /// `σ_s / s_max`; at most 1/2 for any distribution on `[1, s_max]`.
    pub spread_ratio: f64,
    pub kappa0: f64,
    pub non_degenerate: bool,
}

impl PrefillDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform { s_max } if *s_max >= 1 => Ok(()),
            Self::Fixed(s) if *s >= 1 => Ok(()),
            Self::Empirical(v) if !v.is_empty() && v.iter().all(|s| *s >= 1) => Ok(()),
            other => Err(Error::InvalidArgument(format!("invalid prefill distribution {other:?}"))),
        }
    }

    pub fn s_max(&self) -> u64 {
        match self {
            Self::Uniform { s_max } => *s_max,
            Self::Fixed(s) => *s,
            Self::Empirical(v) => v.iter().copied().max().unwrap_or(1),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Uniform { s_max } => (*s_max as f64 + 1.0) / 2.0,
            Self::Fixed(s) => *s as f64,
            Self::Empirical(v) => v.iter().map(|s| *s as f64).sum::<f64>() / v.len() as f64,
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self {
            Self::Uniform { s_max } => {
                let n = *s_max as f64;
                ((n * n - 1.0) / 12.0).sqrt()
            }
            Self::Fixed(_) => 0.0,
            Self::Empirical(v) => {
                let m = self.mean();
                (v.iter().map(|s| (*s as f64 - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
            }
        }
    }

    pub fn validity(&self, kappa0: f64) -> PrefillValidity {
        let s_max = self.s_max();
        let std_dev = self.std_dev();
        let spread_ratio = std_dev / s_max as f64;
        PrefillValidity {
            s_max,
            mean: self.mean(),
            std_dev,
            spread_ratio,
            kappa0,
            non_degenerate: kappa0 <= spread_ratio && spread_ratio <= 0.5,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            Self::Uniform { s_max } => rng.random_range(1..=*s_max),
            Self::Fixed(s) => *s,
            Self::Empirical(v) => v[rng.random_range(0..v.len())],
        }
    }
}

/// Decode length distribution on `{1, 2, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DecodeDistribution {
    /// `P(o = n) = (1-p)^(n-1) p`, mean `1/p`.
    Geometric { p: f64 },
    Fixed(u64),
    Empirical(Vec<u64>),
}

impl DecodeDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Geometric { p } if *p > 0.0 && *p < 1.0 => Ok(()),
            Self::Fixed(o) if *o >= 1 => Ok(()),
            Self::Empirical(v) if !v.is_empty() && v.iter().all(|o| *o >= 1) => Ok(()),
            other => Err(Error::InvalidArgument(format!("invalid decode distribution {other:?}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Geometric { p } => 1.0 / p,
            Self::Fixed(o) => *o as f64,
            Self::Empirical(v) => v.iter().map(|o| *o as f64).sum::<f64>() / v.len() as f64,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            // rand_distr counts failures before the first success
            Self::Geometric { p } => Geometric::new(*p).expect("validated p").sample(rng) + 1,
            Self::Fixed(o) => *o,
            Self::Empirical(v) => v[rng.random_range(0..v.len())],
        }
    }
}

/// Split raw `(prefill, decode)` pairs into two independent empirical distributions.
pub fn empirical_from_pairs(pairs: &[(u64, u64)]) -> (PrefillDistribution, DecodeDistribution) {
    (
        PrefillDistribution::Empirical(pairs.iter().map(|p| p.0).collect()),
        DecodeDistribution::Empirical(pairs.iter().map(|p| p.1).collect()),
    )
}

/// One request of an arrival instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    /// Position in the source (generation order or trace data row, 0-based).
    pub id: u64,
    pub arrival_time: f64,
    pub prefill: u64,
    pub decode: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub seed: Option<u64>,
    pub source: String,
}

/// A finite set of requests with arrival times in nondecreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalInstance {
    requests: Vec<RequestSpec>,
    pub drift: DriftSpec,
    pub meta: InstanceMeta,
}

impl ArrivalInstance {
    pub fn new(requests: Vec<RequestSpec>, drift: DriftSpec, meta: InstanceMeta) -> Result<Self> {
        if requests.windows(2).any(|w| w[1].arrival_time < w[0].arrival_time) {
            return Err(Error::InvalidArgument("arrival times must be nondecreasing".into()));
        }
        for r in &requests {
            if !(r.arrival_time.is_finite() && r.arrival_time >= 0.0) {
                return Err(Error::InvalidArgument(format!("request {} has invalid arrival time", r.id)));
            }
            check_positive(r.prefill, r.decode)?;
        }
        drift.validate()?;
        Ok(Self { requests, drift, meta })
    }

    pub fn empty() -> Self {
        Self {
            requests: Vec::new(),
            drift: DriftSpec::unit(),
            meta: InstanceMeta::default(),
        }
    }

    pub fn with_drift(mut self, drift: DriftSpec) -> Result<Self> {
        drift.validate()?;
        self.drift = drift;
        Ok(self)
    }

    pub fn requests(&self) -> &[RequestSpec] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn profile(&self, index: usize) -> Result<WorkloadProfile> {
        let r = &self.requests[index];
        WorkloadProfile::with_drift(r.prefill, r.decode, &self.drift)
    }

    /// Policy-independent total workload `Σ_i Σ_j w_i^(j)`.
    pub fn total_workload(&self) -> Result<f64> {
        (0..self.len()).map(|i| self.profile(i).map(|p| p.total())).sum()
    }
}

/// Poisson arrivals at `rate` per second on `[0, duration]` with independently
/// sampled prefill and decode lengths.
pub fn sample_instance(
    prefill: &PrefillDistribution,
    decode: &DecodeDistribution,
    rate: f64,
    duration: f64,
    seed: u64,
) -> Result<ArrivalInstance> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be positive (got {rate})")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be positive (got {duration})")));
    }
    prefill.validate()?;
    decode.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut requests = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t > duration {
            break;
        }
        requests.push(RequestSpec {
            id: requests.len() as u64,
            arrival_time: t,
            prefill: prefill.sample(&mut rng),
            decode: decode.sample(&mut rng),
        });
    }
    ArrivalInstance::new(
        requests,
        DriftSpec::unit(),
        InstanceMeta {
            seed: Some(seed),
            source: format!("poisson(rate={rate}, duration={duration})"),
        },
    )
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<ArrivalInstance> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(file, &path.display().to_string())
}

/// Parse the `arrival_time,prefill,decode` CSV format. Rows are sorted by
/// arrival time; each request's `id` keeps its original data-row index.
pub fn parse_trace<R: Read>(reader: R, source: &str) -> Result<ArrivalInstance> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        let line = header.position().map_or(1, |p| p.line());
        return Err(Error::Parse {
            line,
            msg: format!("expected header `{}`, found `{}`", TRACE_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut requests = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let arrival_time: f64 = record[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("arrival_time `{}` is not a number", &record[0]),
        })?;
        if !arrival_time.is_finite() || arrival_time < 0.0 {
            return Err(Error::InvalidTrace {
                line,
                msg: format!("arrival_time {arrival_time} must be finite and non-negative"),
            });
        }
        let prefill = parse_count(&record[1], "prefill", line)?;
        let decode = parse_count(&record[2], "decode", line)?;
        requests.push(RequestSpec {
            id: row as u64,
            arrival_time,
            prefill,
            decode,
        });
    }
    // stable: equal arrival times keep file order
    requests.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
    ArrivalInstance::new(
        requests,
        DriftSpec::unit(),
        InstanceMeta {
            seed: None,
            source: source.to_string(),
        },
    )
}

fn parse_count(field: &str, name: &str, line: u64) -> Result<u64> {
    let v: i64 = field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{name} `{field}` is not an integer"),
    })?;
    if v <= 0 {
        return Err(Error::InvalidTrace {
            line,
            msg: format!("{name} must be a positive integer (got {v})"),
        });
    }
    Ok(v as u64)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse { line, msg: e.to_string() }
}

/// Overload check on a waiting pool of `(prefill, decode)` pairs: even after
/// dropping its largest prefill class, the pool still covers `free_slots`.
pub fn is_overloaded_at(pool: &[(u64, u64)], free_slots: usize, s_max: u64) -> bool {
    let mut classes: HashMap<u64, usize> = HashMap::new();
    for (s, _) in pool {
        if (1..=s_max).contains(s) {
            *classes.entry(*s).or_default() += 1;
        }
    }
    let largest = classes.values().copied().max().unwrap_or(0);
    pool.len() - largest >= free_slots
}
