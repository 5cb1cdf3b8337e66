//! Experiment configuration and the `barrier-lb` command line.
//!
//! Configuration is a flat `key = value` file (`#` starts a comment). Values
//! are resolved in this order, later winning: built-in defaults, the
//! `--config` file, `--set KEY=VALUE` pairs, then the dedicated flags
//! (`--seed`, `--policy`, `--horizon`, `--out`, `--emit-steps`).
//!
//! Every subcommand writes into the output directory, including a
//! `config.txt` echo of the fully resolved configuration (seed included).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use itertools::Itertools;
use rayon::prelude::*;
use serde_json::json;

use crate::engine::{run, write_steps_csv, ArrivalSource, OverloadedSpec, SimConfig, SimResult};
use crate::error::{Error, Result};
use crate::lookahead::LookaheadMode;
use crate::metrics::MetricsReport;
use crate::oracle::{estimate_iir, IirSpec};
use crate::policies::PolicyKind;
use crate::workload::{load_trace, sample_instance, DecodeDistribution, DriftSpec, PrefillDistribution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

/// `max_steps` for overloaded workloads when the key is not set.
pub const OVERLOADED_DEFAULT_STEPS: u64 = 5000;

pub const COMPARE_CSV_HEADER: &str = "policy,avg_imbalance,throughput,tpot,energy";
pub const SWEEP_H_CSV_HEADER: &str = "h,avg_imbalance,throughput,tpot,energy";
pub const SWEEP_G_CSV_HEADER: &str = "g,policy,avg_imbalance,throughput,tpot,energy,saving";

/// Where requests come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSource {
    Trace(PathBuf),
    Poisson {
        prefill: PrefillDistribution,
        decode: DecodeDistribution,
        rate: f64,
        duration: f64,
    },
    /// Endless pool kept above the overload condition. `min_pool` defaults to `G·B`.
    Overloaded {
        prefill: PrefillDistribution,
        decode: DecodeDistribution,
        min_pool: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IirSettings {
    pub batches: Vec<usize>,
    pub workers: Vec<usize>,
    pub trials: usize,
    pub steps: u64,
    pub warmup: u64,
    pub pool_rounds: usize,
}

impl Default for IirSettings {
    fn default() -> Self {
        Self {
            batches: vec![8, 32],
            workers: vec![4, 16],
            trials: 20,
            steps: 2000,
            warmup: 200,
            pool_rounds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub workload: WorkloadSource,
    pub drift: DriftSpec,
    /// Leading steps left out of the reported metrics.
    pub warmup: u64,
    pub policies: Vec<PolicyKind>,
    pub sweep_h: Vec<usize>,
    pub sweep_g: Vec<usize>,
    pub iir: IirSettings,
    pub output: PathBuf,
    pub emit_steps: bool,
}

const KEYS: &[&str] = &[
    "workers",
    "batch",
    "horizon",
    "policy",
    "seed",
    "max_steps",
    "overhead",
    "per_token",
    "lookahead",
    "search_limit",
    "candidate_window",
    "power.p_idle",
    "power.p_max",
    "power.mfu_sat",
    "power.gamma",
    "workload.source",
    "workload.trace",
    "workload.prefill",
    "workload.decode",
    "workload.rate",
    "workload.duration",
    "workload.min_pool",
    "workload.drift",
    "warmup",
    "policies",
    "sweep.h",
    "sweep.g",
    "iir.batch",
    "iir.workers",
    "iir.trials",
    "iir.steps",
    "iir.warmup",
    "iir.pool_rounds",
    "output",
    "emit_steps",
];

/// Parse `key = value` lines into a map; later duplicates win.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` must list at least one value")));
    }
    Ok(items)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

pub fn parse_prefill(v: &str) -> Result<PrefillDistribution> {
    let d = match v.split_once(':') {
        Some(("uniform", n)) => PrefillDistribution::Uniform {
            s_max: num("workload.prefill", n)?,
        },
        Some(("fixed", n)) => PrefillDistribution::Fixed(num("workload.prefill", n)?),
        _ => return Err(Error::Config(format!("prefill `{v}`: use uniform:S_MAX or fixed:N"))),
    };
    d.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(d)
}

pub fn parse_decode(v: &str) -> Result<DecodeDistribution> {
    let d = match v.split_once(':') {
        Some(("geometric", p)) => DecodeDistribution::Geometric {
            p: num("workload.decode", p)?,
        },
        Some(("fixed", n)) => DecodeDistribution::Fixed(num("workload.decode", n)?),
        _ => return Err(Error::Config(format!("decode `{v}`: use geometric:P or fixed:N"))),
    };
    d.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(d)
}

fn prefill_text(d: &PrefillDistribution) -> String {
    match d {
        PrefillDistribution::Uniform { s_max } => format!("uniform:{s_max}"),
        PrefillDistribution::Fixed(s) => format!("fixed:{s}"),
        PrefillDistribution::Empirical(v) => format!("empirical({} values)", v.len()),
    }
}

fn decode_text(d: &DecodeDistribution) -> String {
    match d {
        DecodeDistribution::Geometric { p } => format!("geometric:{p}"),
        DecodeDistribution::Fixed(o) => format!("fixed:{o}"),
        DecodeDistribution::Empirical(v) => format!("empirical({} values)", v.len()),
    }
}

fn drift_text(d: &DriftSpec) -> String {
    match &d.rule {
        crate::workload::DriftRule::Constant(x) => x.to_string(),
        crate::workload::DriftRule::Custom(v) => v.iter().join(","),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            workload: WorkloadSource::Overloaded {
                prefill: PrefillDistribution::Uniform { s_max: 64 },
                decode: DecodeDistribution::Geometric { p: 0.02 },
                min_pool: None,
            },
            drift: DriftSpec::unit(),
            warmup: 0,
            policies: vec![PolicyKind::Fcfs, PolicyKind::Jsq, PolicyKind::BfioGreedy],
            sweep_h: vec![0, 10, 20, 40],
            sweep_g: vec![4, 8, 16],
            iir: IirSettings::default(),
            output: PathBuf::from("results"),
            emit_steps: false,
        }
    }
}

impl ExperimentConfig {
    /// Build from resolved key-value settings on top of the defaults.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let mut c = Self::default();
        let get = |k: &str| map.get(k).map(String::as_str);

        if let Some(v) = get("workers") {
            c.sim.workers = num("workers", v)?;
        }
        if let Some(v) = get("batch") {
            c.sim.batch = num("batch", v)?;
        }
        if let Some(v) = get("horizon") {
            c.sim.horizon = num("horizon", v)?;
        }
        if let Some(v) = get("policy") {
            c.sim.policy = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        }
        if let Some(v) = get("seed") {
            c.sim.seed = num("seed", v)?;
        }
        if let Some(v) = get("max_steps") {
            c.sim.max_steps = num("max_steps", v)?;
        }
        if let Some(v) = get("overhead") {
            c.sim.overhead = num("overhead", v)?;
        }
        if let Some(v) = get("per_token") {
            c.sim.per_token = num("per_token", v)?;
        }
        if let Some(v) = get("lookahead") {
            c.sim.lookahead = v.parse::<LookaheadMode>()?;
        }
        if let Some(v) = get("search_limit") {
            c.sim.search_limit = num("search_limit", v)?;
        }
        if let Some(v) = get("candidate_window") {
            c.sim.candidate_window = num("candidate_window", v)?;
        }
        if let Some(v) = get("power.p_idle") {
            c.sim.power.p_idle = num("power.p_idle", v)?;
        }
        if let Some(v) = get("power.p_max") {
            c.sim.power.p_max = num("power.p_max", v)?;
        }
        if let Some(v) = get("power.mfu_sat") {
            c.sim.power.mfu_sat = num("power.mfu_sat", v)?;
        }
        if let Some(v) = get("power.gamma") {
            c.sim.power.gamma = num("power.gamma", v)?;
        }

        let prefill = get("workload.prefill").map(parse_prefill).transpose()?;
        let decode = get("workload.decode").map(parse_decode).transpose()?;
        let kind = match get("workload.source") {
            Some(k) => k,
            None if get("workload.trace").is_some() => "trace",
            None if get("workload.rate").is_some() => "poisson",
            None => "overloaded",
        };
        let stray = |keys: &[&str]| -> Result<()> {
            match keys.iter().find(|k| get(k).is_some()) {
                Some(k) => Err(Error::Config(format!("`{k}` does not apply to a {kind} workload"))),
                None => Ok(()),
            }
        };
        let default_prefill = PrefillDistribution::Uniform { s_max: 64 };
        let default_decode = DecodeDistribution::Geometric { p: 0.02 };
        c.workload = match kind {
            "trace" => {
                stray(&["workload.prefill", "workload.decode", "workload.rate", "workload.duration", "workload.min_pool"])?;
                let path = get("workload.trace")
                    .ok_or_else(|| Error::Config("trace workload needs `workload.trace`".into()))?;
                WorkloadSource::Trace(PathBuf::from(path))
            }
            "poisson" => {
                stray(&["workload.trace", "workload.min_pool"])?;
                let need = |k: &str| get(k).ok_or_else(|| Error::Config(format!("poisson workload needs `{k}`")));
                WorkloadSource::Poisson {
                    prefill: prefill.unwrap_or(default_prefill),
                    decode: decode.unwrap_or(default_decode),
                    rate: num("workload.rate", need("workload.rate")?)?,
                    duration: num("workload.duration", need("workload.duration")?)?,
                }
            }
            "overloaded" => {
                stray(&["workload.trace", "workload.rate", "workload.duration"])?;
                WorkloadSource::Overloaded {
                    prefill: prefill.unwrap_or(default_prefill),
                    decode: decode.unwrap_or(default_decode),
                    min_pool: get("workload.min_pool").map(|v| num("workload.min_pool", v)).transpose()?,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "workload.source `{other}`: use trace, poisson or overloaded"
                )))
            }
        };
        if get("max_steps").is_none() && matches!(c.workload, WorkloadSource::Overloaded { .. }) {
            c.sim.max_steps = OVERLOADED_DEFAULT_STEPS;
        }
        if let Some(v) = get("workload.drift") {
            let values: Vec<f64> = list("workload.drift", v)?;
            c.drift = if values.len() == 1 {
                DriftSpec::constant(values[0])
            } else {
                let max = values.iter().copied().fold(0.0, f64::max);
                DriftSpec::custom(values, max)?
            };
            c.drift.validate()?;
        }
        if let Some(v) = get("warmup") {
            c.warmup = num("warmup", v)?;
        }
        if let Some(v) = get("policies") {
            c.policies = v
                .split(',')
                .map(|p| p.trim().parse::<PolicyKind>().map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("sweep.h") {
            c.sweep_h = list("sweep.h", v)?;
        }
        if let Some(v) = get("sweep.g") {
            c.sweep_g = list("sweep.g", v)?;
        }
        if let Some(v) = get("iir.batch") {
            c.iir.batches = list("iir.batch", v)?;
        }
        if let Some(v) = get("iir.workers") {
            c.iir.workers = list("iir.workers", v)?;
        }
        if let Some(v) = get("iir.trials") {
            c.iir.trials = num("iir.trials", v)?;
        }
        if let Some(v) = get("iir.steps") {
            c.iir.steps = num("iir.steps", v)?;
        }
        if let Some(v) = get("iir.warmup") {
            c.iir.warmup = num("iir.warmup", v)?;
        }
        if let Some(v) = get("iir.pool_rounds") {
            c.iir.pool_rounds = num("iir.pool_rounds", v)?;
        }
        if let Some(v) = get("output") {
            c.output = PathBuf::from(v);
        }
        if let Some(v) = get("emit_steps") {
            c.emit_steps = parse_bool("emit_steps", v)?;
        }
        c.sim.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?)
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_kv_text(&self) -> String {
        let s = &self.sim;
        let mut rows: Vec<(&str, String)> = vec![
            ("workers", s.workers.to_string()),
            ("batch", s.batch.to_string()),
            ("horizon", s.horizon.to_string()),
            ("policy", s.policy.to_string()),
            ("seed", s.seed.to_string()),
            ("max_steps", s.max_steps.to_string()),
            ("overhead", s.overhead.to_string()),
            ("per_token", s.per_token.to_string()),
            ("lookahead", s.lookahead.to_string()),
            ("search_limit", s.search_limit.to_string()),
            ("candidate_window", s.candidate_window.to_string()),
            ("power.p_idle", s.power.p_idle.to_string()),
            ("power.p_max", s.power.p_max.to_string()),
            ("power.mfu_sat", s.power.mfu_sat.to_string()),
            ("power.gamma", s.power.gamma.to_string()),
        ];
        match &self.workload {
            WorkloadSource::Trace(p) => {
                rows.push(("workload.source", "trace".into()));
                rows.push(("workload.trace", p.display().to_string()));
            }
            WorkloadSource::Poisson {
                prefill,
                decode,
                rate,
                duration,
            } => {
                rows.push(("workload.source", "poisson".into()));
                rows.push(("workload.prefill", prefill_text(prefill)));
                rows.push(("workload.decode", decode_text(decode)));
                rows.push(("workload.rate", rate.to_string()));
                rows.push(("workload.duration", duration.to_string()));
            }
            WorkloadSource::Overloaded {
                prefill,
                decode,
                min_pool,
            } => {
                rows.push(("workload.source", "overloaded".into()));
                rows.push(("workload.prefill", prefill_text(prefill)));
                rows.push(("workload.decode", decode_text(decode)));
                if let Some(m) = min_pool {
                    rows.push(("workload.min_pool", m.to_string()));
                }
            }
        }
        rows.push(("workload.drift", drift_text(&self.drift)));
        rows.push(("warmup", self.warmup.to_string()));
        rows.push(("policies", self.policies.iter().join(",")));
        rows.push(("sweep.h", self.sweep_h.iter().join(",")));
        rows.push(("sweep.g", self.sweep_g.iter().join(",")));
        rows.push(("iir.batch", self.iir.batches.iter().join(",")));
        rows.push(("iir.workers", self.iir.workers.iter().join(",")));
        rows.push(("iir.trials", self.iir.trials.to_string()));
        rows.push(("iir.steps", self.iir.steps.to_string()));
        rows.push(("iir.warmup", self.iir.warmup.to_string()));
        rows.push(("iir.pool_rounds", self.iir.pool_rounds.to_string()));
        rows.push(("output", self.output.display().to_string()));
        rows.push(("emit_steps", self.emit_steps.to_string()));
        rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Arrival source for one run with `sim` (seed and `G·B` taken from it).
    pub fn source(&self, sim: &SimConfig) -> Result<ArrivalSource> {
        Ok(match &self.workload {
            WorkloadSource::Trace(path) => load_trace(path)?.with_drift(self.drift.clone())?.into(),
            WorkloadSource::Poisson {
                prefill,
                decode,
                rate,
                duration,
            } => sample_instance(prefill, decode, *rate, *duration, sim.seed)?
                .with_drift(self.drift.clone())?
                .into(),
            WorkloadSource::Overloaded {
                prefill,
                decode,
                min_pool,
            } => OverloadedSpec {
                prefill: prefill.clone(),
                decode: decode.clone(),
                drift: self.drift.clone(),
                min_pool: min_pool.unwrap_or(sim.workers * sim.batch),
            }
            .into(),
        })
    }

    fn is_finite(&self) -> bool {
        !matches!(self.workload, WorkloadSource::Overloaded { .. })
    }

    /// Run one simulation and summarize it after the warm-up.
    pub fn simulate(&self, sim: &SimConfig) -> Result<(SimResult, MetricsReport)> {
        let result = run(sim, self.source(sim)?)?;
        let skip = (self.warmup as usize).min(result.steps.len());
        let report = MetricsReport::from_parts(&result.steps[skip..], &result.requests, &sim.power);
        Ok((result, report))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    write_file(&cfg.output.join("config.txt"), &cfg.to_kv_text())
}

fn write_steps(path: &Path, result: &SimResult) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_steps_csv(std::io::BufWriter::new(file), result).map_err(|e| Error::io(path, e))
}

fn metric_row(r: &MetricsReport) -> String {
    format!("{},{},{},{}", r.avg_imbalance, r.throughput, r.tpot, r.energy)
}

fn exit_for(cfg: &ExperimentConfig, results: &[&SimResult]) -> i32 {
    if cfg.is_finite() && results.iter().any(|r| !r.completed_all) {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

/// One simulation: `summary.txt`, `summary.json` and optionally `steps.csv`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<i32> {
    let (result, report) = cfg.simulate(&cfg.sim)?;
    prepare_out(cfg)?;
    let mut text = format!(
        "seed = {}\npolicy = {}\ncompleted_all = {}\n",
        cfg.sim.seed, cfg.sim.policy, result.completed_all
    );
    text.push_str(&report.to_kv_text());
    write_file(&cfg.output.join("summary.txt"), &text)?;

    let summary = json!({
        "seed": cfg.sim.seed,
        "policy": cfg.sim.policy.to_string(),
        "completed_all": result.completed_all,
        "avg_imbalance": report.avg_imbalance,
        "throughput_tok_s": report.throughput,
        "tpot_s_tok": report.tpot,
        "energy_j": report.energy,
        "eta_sum": report.eta_sum,
        "imb_total": report.imb_total,
        "total_workload": report.total_workload,
        "steps": report.steps,
        "completed_requests": report.completed_requests,
    });
    let json_text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Internal(e.to_string()))?;
    write_file(&cfg.output.join("summary.json"), &(json_text + "\n"))?;
    if cfg.emit_steps {
        write_steps(&cfg.output.join("steps.csv"), &result)?;
    }
    print!("{text}");
    Ok(exit_for(cfg, &[&result]))
}

/// Policies side by side on the same workload and seed.
pub fn cmd_compare(cfg: &ExperimentConfig, policies: &[PolicyKind]) -> Result<i32> {
    if policies.len() < 2 {
        return Err(Error::Config("compare needs at least two policies".into()));
    }
    let runs: Vec<(SimResult, MetricsReport)> = policies
        .par_iter()
        .map(|p| {
            cfg.simulate(&SimConfig {
                policy: *p,
                ..cfg.sim.clone()
            })
        })
        .collect::<Result<_>>()?;
    prepare_out(cfg)?;
    let mut csv = format!("{COMPARE_CSV_HEADER}\n");
    for (p, (_, r)) in policies.iter().zip(&runs) {
        csv.push_str(&format!("{p},{}\n", metric_row(r)));
    }
    write_file(&cfg.output.join("compare.csv"), &csv)?;
    if cfg.emit_steps {
        for (i, (p, (res, _))) in policies.iter().zip(&runs).enumerate() {
            write_steps(&cfg.output.join(format!("steps_{i}_{p}.csv")), res)?;
        }
    }
    print!("{csv}");
    Ok(exit_for(cfg, &runs.iter().map(|(r, _)| r).collect_vec()))
}

/// One row per lookahead horizon.
pub fn cmd_sweep_h(cfg: &ExperimentConfig, horizons: &[usize]) -> Result<i32> {
    if horizons.is_empty() {
        return Err(Error::Config("sweep-h needs at least one horizon".into()));
    }
    let runs: Vec<(SimResult, MetricsReport)> = horizons
        .par_iter()
        .map(|h| {
            cfg.simulate(&SimConfig {
                horizon: *h,
                ..cfg.sim.clone()
            })
        })
        .collect::<Result<_>>()?;
    prepare_out(cfg)?;
    let mut csv = format!("{SWEEP_H_CSV_HEADER}\n");
    for (h, (_, r)) in horizons.iter().zip(&runs) {
        csv.push_str(&format!("{h},{}\n", metric_row(r)));
    }
    write_file(&cfg.output.join("sweep_h.csv"), &csv)?;
    if cfg.emit_steps {
        for (h, (res, _)) in horizons.iter().zip(&runs) {
            write_steps(&cfg.output.join(format!("steps_h{h}.csv")), res)?;
        }
    }
    print!("{csv}");
    Ok(exit_for(cfg, &runs.iter().map(|(r, _)| r).collect_vec()))
}

/// FCFS and BF-IO at each cluster size, with BF-IO's energy saving.
pub fn cmd_sweep_g(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<i32> {
    if sizes.is_empty() {
        return Err(Error::Config("sweep-g needs at least one worker count".into()));
    }
    let bfio = if cfg.sim.policy.is_bfio() {
        cfg.sim.policy
    } else {
        PolicyKind::BfioGreedy
    };
    let cells: Vec<(usize, PolicyKind)> = sizes
        .iter()
        .flat_map(|g| [(*g, PolicyKind::Fcfs), (*g, bfio)])
        .collect();
    let runs: Vec<(SimResult, MetricsReport)> = cells
        .par_iter()
        .map(|(g, p)| {
            cfg.simulate(&SimConfig {
                workers: *g,
                policy: *p,
                ..cfg.sim.clone()
            })
        })
        .collect::<Result<_>>()?;
    prepare_out(cfg)?;
    let mut csv = format!("{SWEEP_G_CSV_HEADER}\n");
    for (pair, cell) in runs.chunks(2).zip(cells.chunks(2)) {
        let fcfs_energy = pair[0].1.energy;
        for ((_, r), (g, p)) in pair.iter().zip(cell) {
            let saving = if *p == PolicyKind::Fcfs || fcfs_energy <= 0.0 {
                0.0
            } else {
                1.0 - r.energy / fcfs_energy
            };
            csv.push_str(&format!("{g},{p},{},{saving}\n", metric_row(r)));
        }
    }
    write_file(&cfg.output.join("sweep_g.csv"), &csv)?;
    if cfg.emit_steps {
        for ((res, _), (g, p)) in runs.iter().zip(&cells) {
            write_steps(&cfg.output.join(format!("steps_g{g}_{p}.csv")), res)?;
        }
    }
    print!("{csv}");
    Ok(exit_for(cfg, &runs.iter().map(|(r, _)| r).collect_vec()))
}

/// Imbalance improvement ratio on the `iir.batch × iir.workers` grid.
pub fn cmd_iir(cfg: &ExperimentConfig) -> Result<i32> {
    let (prefill, decode) = match &cfg.workload {
        WorkloadSource::Overloaded { prefill, decode, .. } | WorkloadSource::Poisson { prefill, decode, .. } => {
            (prefill.clone(), decode.clone())
        }
        WorkloadSource::Trace(_) => {
            return Err(Error::Config("iir needs a synthetic workload (prefill and decode distributions)".into()))
        }
    };
    let grid: Vec<(usize, usize)> = cfg
        .iir
        .batches
        .iter()
        .cartesian_product(&cfg.iir.workers)
        .map(|(b, g)| (*b, *g))
        .collect();
    let spec = IirSpec {
        prefill,
        decode,
        drift: cfg.drift.clone(),
        pool_rounds: cfg.iir.pool_rounds,
        steps: cfg.iir.steps,
        warmup: cfg.iir.warmup,
        bfio: if cfg.sim.policy.is_bfio() {
            cfg.sim.policy
        } else {
            PolicyKind::BfioGreedy
        },
        horizon: cfg.sim.horizon,
        base: cfg.sim.clone(),
    };
    let estimate = estimate_iir(&grid, &spec, cfg.iir.trials, cfg.sim.seed)?;
    prepare_out(cfg)?;
    let csv = estimate.to_csv();
    write_file(&cfg.output.join("iir.csv"), &csv)?;
    print!("{csv}");
    for c in estimate.cells.iter().filter(|c| c.outside_regime || c.infinite) {
        eprintln!(
            "note: B={} G={}{}{}",
            c.batch,
            c.workers,
            if c.outside_regime { " is outside the sqrt(G) << B regime" } else { "" },
            if c.infinite { " has zero BF-IO imbalance (ratio infinite)" } else { "" }
        );
    }
    Ok(EXIT_OK)
}

/// Parse a trace and report its shape without simulating.
pub fn cmd_validate_trace(path: &Path) -> Result<i32> {
    let instance = load_trace(path)?;
    let pairs: Vec<(u64, u64)> = instance.requests().iter().map(|r| (r.prefill, r.decode)).collect();
    let (prefill, decode) = crate::workload::empirical_from_pairs(&pairs);
    let mut out = format!("requests = {}\n", instance.len());
    if !instance.is_empty() {
        let v = prefill.validity(0.0);
        let last = instance.requests().last().map_or(0.0, |r| r.arrival_time);
        out.push_str(&format!("last_arrival_s = {last}\n"));
        out.push_str(&format!("prefill_max = {}\n", v.s_max));
        out.push_str(&format!("prefill_mean = {}\n", v.mean));
        out.push_str(&format!("prefill_std = {}\n", v.std_dev));
        out.push_str(&format!("prefill_spread_ratio = {}\n", v.spread_ratio));
        out.push_str(&format!("decode_mean = {}\n", decode.mean()));
        out.push_str(&format!("total_workload = {}\n", instance.total_workload()?));
    }
    print!("{out}");
    Ok(EXIT_OK)
}

#[derive(Debug, Parser)]
#[command(name = "barrier-lb", version, about = "Barrier-synchronized load balancing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "NAME")]
    pub policy: Option<String>,
    #[arg(long, value_name = "H")]
    pub horizon: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write per-step CSVs.
    #[arg(long)]
    pub emit_steps: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare policies on the same workload and seed.
    Compare {
        /// Comma-separated policy names (default from `policies`).
        #[arg(value_delimiter = ',')]
        policies: Vec<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep the lookahead horizon.
    SweepH {
        #[arg(value_delimiter = ',')]
        horizons: Vec<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep the number of workers, FCFS against BF-IO.
    SweepG {
        #[arg(value_delimiter = ',')]
        sizes: Vec<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the imbalance improvement ratio on a (B, G) grid.
    Iir {
        #[arg(long, value_delimiter = ',')]
        batch: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        workers: Vec<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check a trace file and print its statistics.
    ValidateTrace { path: PathBuf },
}

/// Resolve the configuration from file, `--set` pairs and flags.
pub fn resolve_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut map = match &common.config {
        Some(path) => parse_kv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
        None => BTreeMap::new(),
    };
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(s) = common.seed {
        map.insert("seed".into(), s.to_string());
    }
    if let Some(p) = &common.policy {
        map.insert("policy".into(), p.clone());
    }
    if let Some(h) = common.horizon {
        map.insert("horizon".into(), h.to_string());
    }
    if let Some(o) = &common.out {
        map.insert("output".into(), o.display().to_string());
    }
    if common.emit_steps {
        map.insert("emit_steps".into(), "true".into());
    }
    ExperimentConfig::from_map(&map)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run { common } => cmd_run(&resolve_config(common)?),
        Command::Compare { policies, common } => {
            let mut cfg = resolve_config(common)?;
            if !policies.is_empty() {
                cfg.policies = policies
                    .iter()
                    .map(|p| p.parse().map_err(|e: Error| Error::Config(e.to_string())))
                    .collect::<Result<_>>()?;
            }
            cmd_compare(&cfg, &cfg.policies)
        }
        Command::SweepH { horizons, common } => {
            let cfg = resolve_config(common)?;
            let hs = if horizons.is_empty() { cfg.sweep_h.clone() } else { horizons.clone() };
            cmd_sweep_h(&cfg, &hs)
        }
        Command::SweepG { sizes, common } => {
            let cfg = resolve_config(common)?;
            let gs = if sizes.is_empty() { cfg.sweep_g.clone() } else { sizes.clone() };
            cmd_sweep_g(&cfg, &gs)
        }
        Command::Iir {
            batch,
            workers,
            trials,
            common,
        } => {
            let mut cfg = resolve_config(common)?;
            if !batch.is_empty() {
                cfg.iir.batches = batch.clone();
            }
            if !workers.is_empty() {
                cfg.iir.workers = workers.clone();
            }
            if let Some(t) = trials {
                cfg.iir.trials = *t;
            }
            cmd_iir(&cfg)
        }
        Command::ValidateTrace { path } => cmd_validate_trace(path),
    }
}

/// Parse arguments, run the subcommand and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
