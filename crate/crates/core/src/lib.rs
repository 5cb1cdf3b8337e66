//! Load balancing for barrier-synchronized workers with sticky assignments.
//!
//! Every decode step, all workers must finish before any proceeds, so the
//! step lasts as long as the most loaded worker. Requests cannot migrate once
//! placed, and their per-step cost grows as their KV cache grows. This crate
//! provides:
//!
//! * [`workload`]: request profiles, arrival instances, trace loading;
//! * [`engine`]: the step-indexed simulator;
//! * [`policies`]: FCFS, JSQ and the BF-IO exact and greedy assigners;
//! * [`metrics`]: imbalance, throughput, TPOT and GPU energy;
//! * [`oracle`]: brute-force references and Monte-Carlo scaling estimates;
//! * [`cli`]: experiment configuration and the `barrier-lb` commands.
//!
//! ```
//! use barrier_lb::engine::{run, SimConfig};
//! use barrier_lb::policies::PolicyKind;
//! use barrier_lb::workload::{sample_instance, DecodeDistribution, PrefillDistribution};
//!
//! let instance = sample_instance(
//!     &PrefillDistribution::Uniform { s_max: 64 },
//!     &DecodeDistribution::Geometric { p: 0.1 },
//!     200.0,
//!     0.5,
//!     7,
//! )
//! .unwrap();
//! let config = SimConfig { workers: 4, batch: 8, policy: PolicyKind::BfioGreedy, ..SimConfig::default() };
//! let result = run(&config, instance).unwrap();
//! assert!(result.completed_all);
//! ```

pub mod cli;
pub mod engine;
pub mod error;
pub mod lookahead;
pub mod metrics;
pub mod oracle;
pub mod policies;
pub mod workload;

pub use error::{Error, Result};
