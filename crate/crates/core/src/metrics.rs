//! Evaluation metrics: imbalance, throughput, TPOT and the GPU energy model.
//!
//! Energy follows a sublinear power curve in utilization. A worker's
//! utilization at a step is its load relative to the step's maximum load,
//! and the step lasts as long as the engine's `dt`, so the barrier wait of
//! lightly loaded workers is paid at close to idle power.

use serde::{Deserialize, Serialize};

use crate::engine::{RequestTiming, SimResult, StepRecord};
use crate::error::{Error, Result};

/// Sublinear GPU power curve `P(u) = p_idle + (p_max - p_idle) u^gamma`,
/// where `u = mfu / mfu_sat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub p_idle: f64,
    pub p_max: f64,
    pub mfu_sat: f64,
    pub gamma: f64,
}

impl Default for PowerModel {
    /// A100-class parameters.
    fn default() -> Self {
        Self {
            p_idle: 100.0,
            p_max: 400.0,
            mfu_sat: 0.45,
            gamma: 0.7,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.p_idle
            && self.p_idle < self.p_max
            && self.p_max.is_finite()
            && 0.0 < self.mfu_sat
            && self.mfu_sat <= 1.0
            && 0.0 < self.gamma
            && self.gamma < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid power model {self:?}")))
        }
    }

    /// `(1-γ) P_max + γ P_idle`
    pub fn c_gamma(&self) -> f64 {
        (1.0 - self.gamma) * self.p_max + self.gamma * self.p_idle
    }

    /// `(1-γ) (P_max - P_idle)`
    pub fn d_gamma(&self) -> f64 {
        (1.0 - self.gamma) * (self.p_max - self.p_idle)
    }

    /// Power at an absolute MFU, saturating at `mfu_sat`.
    pub fn power_at_mfu(&self, mfu: f64) -> Result<f64> {
        if !(mfu.is_finite() && mfu >= 0.0) {
            return Err(Error::InvalidArgument(format!("mfu {mfu} must be >= 0")));
        }
        power((mfu / self.mfu_sat).min(1.0), self)
    }
}

/// `G · max(loads) − Σ loads`: total idle work at a barrier.
pub fn imbalance(loads: &[f64]) -> f64 {
    let max = loads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if loads.is_empty() {
        return 0.0;
    }
    loads.len() as f64 * max - loads.iter().sum::<f64>()
}

pub fn avg_imbalance(steps: &[StepRecord]) -> Result<f64> {
    if steps.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(steps.iter().map(|s| imbalance(&s.loads)).sum::<f64>() / steps.len() as f64)
}

/// Tokens per simulated second: `Σ_k |A(k)| / Σ_k dt(k)`.
pub fn throughput(steps: &[StepRecord]) -> Result<f64> {
    let elapsed: f64 = steps.iter().map(|s| s.dt).sum();
    if elapsed <= 0.0 {
        return Err(Error::UndefinedMetric("throughput over zero elapsed time"));
    }
    let tokens: usize = steps.iter().map(|s| s.active_count).sum();
    Ok(tokens as f64 / elapsed)
}

/// Mean over completed requests of `(finish − start) / o_i`.
pub fn tpot(timings: &[RequestTiming]) -> Result<f64> {
    let per_token: Vec<f64> = timings
        .iter()
        .filter_map(|t| match (t.start_clock, t.finish_clock) {
            (Some(start), Some(finish)) => Some((finish - start) / t.decode as f64),
            _ => None,
        })
        .collect();
    if per_token.is_empty() {
        return Err(Error::UndefinedMetric("tpot without completed requests"));
    }
    Ok(per_token.iter().sum::<f64>() / per_token.len() as f64)
}

/// `u_g = L_g / max L`; an all-zero step has zero utilization everywhere.
pub fn utilization(loads: &[f64]) -> Vec<f64> {
    let max = loads.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; loads.len()];
    }
    loads.iter().map(|l| l / max).collect()
}

/// Power draw at utilization ratio `u = mfu / mfu_sat ∈ [0, 1]`.
pub fn power(u: f64, model: &PowerModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("utilization {u} outside [0, 1]")));
    }
    Ok(model.p_idle + (model.p_max - model.p_idle) * u.powf(model.gamma))
}

/// Energy of one step in joules.
pub fn step_energy(step: &StepRecord, model: &PowerModel) -> f64 {
    let watts: f64 = utilization(&step.loads)
        .into_iter()
        .map(|u| power(u.clamp(0.0, 1.0), model).expect("clamped utilization"))
        .sum();
    step.dt * watts
}

/// `Σ_k dt(k) · Σ_g P(u_g(k))`.
pub fn energy(steps: &[StepRecord], model: &PowerModel) -> f64 {
    steps.iter().map(|s| step_energy(s, model)).sum()
}

/// Guaranteed energy-saving fraction of an improved policy whose long-run
/// imbalance is `alpha` times smaller than a baseline with normalized
/// imbalance `eta_sum`. Negative results are valid (vacuous) bounds.
pub fn energy_saving_lower_bound(alpha: f64, eta_sum: f64, model: &PowerModel) -> f64 {
    let inv_alpha = 1.0 / alpha;
    let scale = 1.0 / (model.p_max / eta_sum + model.c_gamma());
    scale * (model.p_idle * (1.0 - inv_alpha) - model.d_gamma() * inv_alpha)
}

/// MFU implied by a token rate at ~6 FLOPs per parameter per token.
pub fn mfu_from_throughput(tok_per_sec: f64, n_params: f64, peak_flops: f64) -> f64 {
    tok_per_sec * 6.0 * n_params / peak_flops
}

/// Summary of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub steps: usize,
    pub avg_imbalance: f64,
    pub throughput: f64,
    /// NaN when no request completed.
    pub tpot: f64,
    pub energy: f64,
    pub imb_total: f64,
    pub total_workload: f64,
    pub eta_sum: f64,
    pub completed_requests: usize,
    #[serde(skip)]
    pub imbalance_series: Vec<f64>,
    #[serde(skip)]
    pub energy_series: Vec<f64>,
}

impl MetricsReport {
    pub fn from_result(result: &SimResult, model: &PowerModel) -> Self {
        Self::from_parts(&result.steps, &result.requests, model)
    }

    pub fn from_parts(steps: &[StepRecord], timings: &[RequestTiming], model: &PowerModel) -> Self {
        let imbalance_series: Vec<f64> = steps.iter().map(|s| imbalance(&s.loads)).collect();
        let energy_series: Vec<f64> = steps.iter().map(|s| step_energy(s, model)).collect();
        let imb_total: f64 = imbalance_series.iter().sum();
        let total_workload: f64 = steps.iter().map(|s| s.loads.iter().sum::<f64>()).sum();
        Self {
            steps: steps.len(),
            avg_imbalance: avg_imbalance(steps).unwrap_or(0.0),
            throughput: throughput(steps).unwrap_or(0.0),
            tpot: tpot(timings).unwrap_or(f64::NAN),
            energy: energy_series.iter().sum(),
            imb_total,
            total_workload,
            eta_sum: if total_workload > 0.0 { imb_total / total_workload } else { 0.0 },
            completed_requests: timings.iter().filter(|t| t.finish_clock.is_some()).count(),
            imbalance_series,
            energy_series,
        }
    }

    /// The five summary fields under their stable names.
    pub fn summary_fields(&self) -> [(&'static str, f64); 5] {
        [
            ("avg_imbalance", self.avg_imbalance),
            ("throughput_tok_s", self.throughput),
            ("tpot_s_tok", self.tpot),
            ("energy_j", self.energy),
            ("eta_sum", self.eta_sum),
        ]
    }

    /// Flat `key = value` block.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.summary_fields() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!("imb_total = {}\n", self.imb_total));
        out.push_str(&format!("total_workload = {}\n", self.total_workload));
        out.push_str(&format!("steps = {}\n", self.steps));
        out.push_str(&format!("completed_requests = {}\n", self.completed_requests));
        out
    }
}
