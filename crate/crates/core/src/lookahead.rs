//! Short-horizon workload predictions handed to the policies.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::WorkloadProfile;

/// How much of a request's remaining run the scheduler can see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum LookaheadMode {
    /// True remaining length and workloads.
    #[default]
    Perfect,
    /// Completions are invisible: every request is predicted to outlive the window.
    Truncated,
    /// True remaining length plus Gaussian noise (rounded, clamped at 0).
    Noisy { sigma: f64 },
}

impl fmt::Display for LookaheadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Perfect => f.write_str("perfect"),
            Self::Truncated => f.write_str("truncated"),
            Self::Noisy { sigma } => write!(f, "noisy:{sigma}"),
        }
    }
}

impl FromStr for LookaheadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(Self::Perfect),
            "truncated" => Ok(Self::Truncated),
            _ => {
                let sigma = s
                    .strip_prefix("noisy:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| Error::Config(format!("unknown lookahead mode `{s}`")))?;
                Ok(Self::Noisy { sigma })
            }
        }
    }
}

/// Prediction oracle for one step `k` with window `horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookaheadView {
    pub horizon: usize,
    pub mode: LookaheadMode,
    pub seed: u64,
    pub step: u64,
}

impl LookaheadView {
    pub fn perfect(horizon: usize) -> Self {
        Self {
            horizon,
            mode: LookaheadMode::Perfect,
            seed: 0,
            step: 0,
        }
    }

    /// Predicted workloads `ŵ^(1..=H)` of a request that has completed
    /// `completed` steps and is about to run its next one. Length is exactly `H`.
    pub fn predict(&self, id: usize, profile: &WorkloadProfile, completed: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        self.fill(id, profile, completed, &mut out);
        out
    }

    /// `[current workload, ŵ^(1), ..., ŵ^(H)]`.
    pub fn trajectory(&self, id: usize, profile: &WorkloadProfile, completed: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon + 1];
        out[0] = profile.at(completed);
        self.fill(id, profile, completed, &mut out[1..]);
        out
    }

    /// Adds the trajectory into `acc` (length `H + 1`).
    pub fn accumulate(&self, id: usize, profile: &WorkloadProfile, completed: usize, acc: &mut [f64]) {
        acc[0] += profile.at(completed);
        if self.horizon == 0 {
            return;
        }
        let visible = self.visible_steps(id, profile, completed);
        for (h, slot) in acc[1..].iter_mut().enumerate().take(visible) {
            *slot += workload_at(profile, completed + h + 1);
        }
    }

    fn fill(&self, id: usize, profile: &WorkloadProfile, completed: usize, out: &mut [f64]) {
        let visible = self.visible_steps(id, profile, completed);
        for (h, slot) in out.iter_mut().enumerate().take(visible) {
            *slot = workload_at(profile, completed + h + 1);
        }
    }

    /// Number of future steps (after the current one) predicted to run.
    fn visible_steps(&self, id: usize, profile: &WorkloadProfile, completed: usize) -> usize {
        let remaining = profile.len().saturating_sub(completed + 1);
        let predicted = match self.mode {
            LookaheadMode::Perfect => remaining,
            LookaheadMode::Truncated => usize::MAX,
            LookaheadMode::Noisy { sigma } => {
                if sigma == 0.0 {
                    remaining
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, id as u64, self.step));
                    let noise = Normal::new(0.0, sigma).expect("sigma validated").sample(&mut rng);
                    (remaining as f64 + noise).round().max(0.0) as usize
                }
            }
        };
        predicted.min(self.horizon)
    }
}

/// Profile entry at a 0-based index; past the end the profile is extended
/// with its last increment.
fn workload_at(profile: &WorkloadProfile, index: usize) -> f64 {
    let steps = profile.steps();
    if let Some(w) = steps.get(index) {
        return *w;
    }
    let last = steps[steps.len() - 1];
    let slope = if steps.len() >= 2 { last - steps[steps.len() - 2] } else { 0.0 };
    last + slope * (index + 1 - steps.len()) as f64
}

fn mix(seed: u64, id: u64, step: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
