//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use barrier_lb::engine::{run, OverloadedSpec, SimConfig, Simulation};
use barrier_lb::metrics::{energy, energy_saving_lower_bound, power, MetricsReport, PowerModel};
use barrier_lb::oracle::{brute_force_best, estimate_iir, overloaded_avg_imbalance, IirEstimate, IirSpec};
use barrier_lb::policies::{bfio_assign_exact, horizon_cost, predict_loads, PolicyKind};
use barrier_lb::workload::{
    is_overloaded_at, sample_instance, ArrivalInstance, DecodeDistribution, DriftSpec, InstanceMeta,
    PrefillDistribution, RequestSpec, WorkloadProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn c1_exact_matches_brute_force() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cost_mismatch = 0;
    let mut choice_mismatch = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let step = common::random_step(&mut rng, 3, 3, 6, 2, 40);
        let v = step.view();
        let exact = bfio_assign_exact(&v, u128::MAX).expect("small instance");
        let j_exact = horizon_cost(&predict_loads(&v, &exact));
        let (best, j_best) = brute_force_best(&v, usize::MAX).expect("small instance");
        if j_exact != j_best {
            cost_mismatch += 1;
        }
        if exact != best {
            choice_mismatch += 1;
        }
    }
    let took = start.elapsed();
    outcome(
        cost_mismatch == 0 && took < Duration::from_secs(60),
        format!(
            "{trials} instances, {cost_mismatch} cost mismatches, {choice_mismatch} tie-break differences, {}",
            secs(took)
        ),
    )
}

fn c2_full_refill_gap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_slack = f64::INFINITY;
    let mut violations = 0;
    let trials = 1000;
    for _ in 0..trials {
        // every (G, B) with at most 6 slots, so the exact search stays small
        let shapes = [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (4, 1), (5, 1), (6, 1)];
        let (g, b): (usize, usize) = shapes[rng.random_range(0..shapes.len())];
        let s_max = rng.random_range(2..=30u64);
        let extra = rng.random_range(0..=2usize);
        let slots = g * b;
        let mut pool: Vec<(u64, u64)> = Vec::new();
        while pool.len() < slots + extra || !is_overloaded_at(&pool, slots, s_max) {
            pool.push((rng.random_range(1..=s_max), rng.random_range(1..=20)));
        }
        let profiles: Vec<WorkloadProfile> = pool.iter().map(|(s, o)| WorkloadProfile::llm(*s, *o).unwrap()).collect();
        let waiting: Vec<usize> = (0..pool.len()).collect();
        let caps = vec![b; g];
        let base = vec![vec![0.0]; g];
        let la = barrier_lb::lookahead::LookaheadView::perfect(0);
        let view = barrier_lb::policies::StepView {
            caps: &caps,
            active_counts: &vec![0; g],
            base: &base,
            waiting: &waiting,
            profiles: &profiles,
            lookahead: &la,
        };
        let a = bfio_assign_exact(&view, 50_000_000).expect("small instance");
        let loads = &predict_loads(&view, &a)[0];
        let max = loads.iter().copied().fold(f64::MIN, f64::max);
        let min = loads.iter().copied().fold(f64::MAX, f64::min);
        let slack = s_max as f64 - (max - min);
        worst_slack = worst_slack.min(slack);
        if slack < 0.0 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{trials} full-refill steps, {violations} with max-min > s_max, tightest slack {worst_slack}"),
    )
}

fn conservation(drift: DriftSpec) -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = 0;
    for seed in 0..100u64 {
        let inst = sample_instance(
            &PrefillDistribution::Uniform { s_max: 64 },
            &DecodeDistribution::Geometric { p: 0.05 },
            400.0,
            0.5,
            seed,
        )
        .unwrap()
        .with_drift(drift.clone())
        .unwrap();
        let expected = inst.total_workload().unwrap();
        let totals: Vec<f64> = [PolicyKind::Fcfs, PolicyKind::Jsq, PolicyKind::BfioGreedy]
            .iter()
            .map(|p| {
                let cfg = SimConfig {
                    workers: 4,
                    batch: 4,
                    policy: *p,
                    horizon: (seed % 4) as usize,
                    seed,
                    ..SimConfig::default()
                };
                let r = run(&cfg, inst.clone()).unwrap();
                assert!(r.completed_all);
                r.executed_workload()
            })
            .collect();
        for t in &totals {
            let rel = (t - expected).abs() / expected.max(1.0);
            worst = worst.max(rel);
            if rel > 1e-12 {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("100 instances x 3 policies, worst relative deviation {worst:e}"),
    )
}

/// (fcfs, jsq, bfio) average imbalance per seed on the desk-scale overloaded setup.
fn desk_runs(drift: DriftSpec, horizon: usize, policies: &[PolicyKind]) -> Vec<Vec<f64>> {
    let spec = IirSpec {
        drift,
        steps: 5000,
        warmup: 0,
        horizon,
        ..IirSpec::default()
    };
    let jobs: Vec<(u64, PolicyKind)> = (0..10u64)
        .flat_map(|s| policies.iter().map(move |p| (s, *p)))
        .collect();
    let flat: Vec<f64> = jobs
        .par_iter()
        .map(|(seed, p)| overloaded_avg_imbalance(&spec, 16, 8, *p, 1000 + seed).unwrap())
        .collect();
    flat.chunks(policies.len()).map(|c| c.to_vec()).collect()
}

fn policy_ordering(drift: DriftSpec) -> Outcome {
    let start = Instant::now();
    let runs = desk_runs(drift, 0, &[PolicyKind::Fcfs, PolicyKind::Jsq, PolicyKind::BfioGreedy]);
    let col = |i: usize| mean(&runs.iter().map(|r| r[i]).collect::<Vec<_>>());
    let (fcfs, jsq, bfio) = (col(0), col(1), col(2));
    let took = start.elapsed();
    outcome(
        bfio <= 0.5 * fcfs && jsq <= fcfs && took < Duration::from_secs(300),
        format!(
            "mean AvgImbalance fcfs {fcfs:.1}, jsq {jsq:.1}, bfio-greedy {bfio:.1}; bfio/fcfs = {:.3} (need <= 0.5), jsq/fcfs = {:.3} (need <= 1), {}",
            bfio / fcfs,
            jsq / fcfs,
            secs(took)
        ),
    )
}

fn c5_horizon() -> Outcome {
    let h0 = desk_runs(DriftSpec::unit(), 0, &[PolicyKind::BfioGreedy]);
    let h20 = desk_runs(DriftSpec::unit(), 20, &[PolicyKind::BfioGreedy]);
    let wins = h0.iter().zip(&h20).filter(|(a, b)| b[0] <= a[0]).count();
    let ratio = mean(&h20.iter().map(|r| r[0]).collect::<Vec<_>>()) / mean(&h0.iter().map(|r| r[0]).collect::<Vec<_>>());
    outcome(
        wins >= 8,
        format!("H=20 <= H=0 in {wins}/10 seeds (need >= 8); mean H20/H0 = {ratio:.3}"),
    )
}

/// Increases along B (fixed G) and along G (fixed B), each in units of the
/// standard error of the difference.
fn iir_axes(est: &IirEstimate, batches: &[usize], sizes: &[usize]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut check = |lo: (usize, usize), hi: (usize, usize)| {
        let (a, b) = (est.cell(lo.0, lo.1).unwrap(), est.cell(hi.0, hi.1).unwrap());
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        let z = (b.ratio - a.ratio) / se;
        ok &= z > 2.0;
        parts.push(format!("(B{},G{})->(B{},G{}) {:+.2} = {z:.1} SE", lo.0, lo.1, hi.0, hi.1, b.ratio - a.ratio));
    };
    for &g in sizes {
        check((batches[0], g), (batches[1], g));
    }
    for &b in batches {
        check((b, sizes[0]), (b, sizes[1]));
    }
    (ok, parts.join("; "))
}

fn c6_iir_scaling() -> Outcome {
    let start = Instant::now();
    let (batches, sizes) = ([8usize, 32], [4usize, 16]);
    let grid: Vec<(usize, usize)> = batches.iter().flat_map(|b| sizes.iter().map(move |g| (*b, *g))).collect();
    // fixed decode length: the homogeneous-decode model
    let spec = IirSpec {
        decode: DecodeDistribution::Fixed(50),
        ..IirSpec::default()
    };
    let est = estimate_iir(&grid, &spec, 20, 6).unwrap();
    let (ok, detail) = iir_axes(&est, &batches, &sizes);
    let ratios: Vec<String> = est
        .cells
        .iter()
        .map(|c| format!("B{}G{}={:.2}", c.batch, c.workers, c.ratio))
        .collect();

    // geometric decode at the same scale, reported alongside
    let geo = estimate_iir(&grid, &IirSpec::default(), 20, 6).unwrap();
    let (geo_ok, geo_detail) = iir_axes(&geo, &batches, &sizes);
    let took = start.elapsed();
    outcome(
        ok && took < Duration::from_secs(900),
        format!(
            "fixed decode 50: ratios {}; {detail}. [diagnostic, geometric decode p=0.02: {}; {geo_detail}] {}",
            ratios.join(" "),
            if geo_ok { "monotone" } else { "not monotone" },
            secs(took)
        ),
    )
}

fn c7_energy_closed_forms() -> Outcome {
    let model = PowerModel::default();
    // 8 identical requests on 4 workers of 2 slots: every step is perfectly balanced
    let requests = (0..8)
        .map(|i| RequestSpec {
            id: i,
            arrival_time: 0.0,
            prefill: 10,
            decode: 5,
        })
        .collect();
    let inst = ArrivalInstance::new(requests, DriftSpec::unit(), InstanceMeta::default()).unwrap();
    let cfg = SimConfig {
        workers: 4,
        batch: 2,
        policy: PolicyKind::Fcfs,
        ..SimConfig::default()
    };
    let r = run(&cfg, inst).unwrap();
    let e = energy(&r.steps, &model);
    let closed = 4.0 * model.p_max * r.elapsed();
    let rel_a = (e - closed).abs() / closed;
    let p0 = power(0.0, &model).unwrap();
    let p1 = power(1.0, &model).unwrap();
    let limit = energy_saving_lower_bound(f64::INFINITY, f64::INFINITY, &model);
    let err_c = (limit - 100.0 / 190.0).abs();
    outcome(
        rel_a < 1e-12 && p0 == 100.0 && p1 == 400.0 && err_c < 1e-12,
        format!("(a) rel err {rel_a:e}; (b) power(0) = {p0}, power(1) = {p1}; (c) limit {limit} (err {err_c:e})"),
    )
}

fn c8_energy_vs_scale() -> Outcome {
    let sizes = [4usize, 8, 16];
    let seeds = 5u64;
    let jobs: Vec<(usize, u64, PolicyKind)> = sizes
        .iter()
        .flat_map(|g| (0..seeds).flat_map(move |s| [(*g, s, PolicyKind::Fcfs), (*g, s, PolicyKind::BfioGreedy)]))
        .collect();
    // long prompts, so per-token compute rather than the fixed step overhead sets the step time
    let energies: Vec<f64> = jobs
        .par_iter()
        .map(|(g, seed, p)| {
            let cfg = SimConfig {
                workers: *g,
                batch: 16,
                policy: *p,
                seed: 800 + seed,
                max_steps: 3300,
                ..SimConfig::default()
            };
            let src = OverloadedSpec {
                prefill: PrefillDistribution::Uniform { s_max: 16384 },
                decode: DecodeDistribution::Geometric { p: 0.02 },
                drift: DriftSpec::unit(),
                min_pool: g * 16,
            };
            let r = Simulation::new(cfg.clone(), src).unwrap().run_to_end().unwrap();
            MetricsReport::from_parts(&r.steps[300..], &[], &cfg.power).energy
        })
        .collect();
    let mut savings = Vec::new();
    let mut lower_everywhere = true;
    for (i, _) in sizes.iter().enumerate() {
        let block = &energies[i * 2 * seeds as usize..(i + 1) * 2 * seeds as usize];
        let fcfs = mean(&block.iter().step_by(2).copied().collect::<Vec<_>>());
        let bfio = mean(&block.iter().skip(1).step_by(2).copied().collect::<Vec<_>>());
        lower_everywhere &= bfio < fcfs;
        savings.push(1.0 - bfio / fcfs);
    }
    let nondecreasing = savings.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let text: Vec<String> = sizes
        .iter()
        .zip(&savings)
        .map(|(g, s)| format!("G{g} {:.2}%", 100.0 * s))
        .collect();
    outcome(
        lower_everywhere && nondecreasing,
        format!(
            "prefill U[1,16384], B=16, mean over {seeds} seeds; saving {}; BF-IO lower at every G: {lower_everywhere}",
            text.join(", ")
        ),
    )
}

fn c9_zero_drift() -> Outcome {
    let a = conservation(DriftSpec::zero());
    let b = policy_ordering(DriftSpec::zero());
    outcome(
        a.pass && b.pass,
        format!("conservation: {}. ordering: {}", a.detail, b.detail),
    )
}

fn golden() -> Vec<(String, String)> {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/schemas.txt")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l.split_once(": ").unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn schema_of(dir: &Path, file: &str) -> String {
    let text = fs::read_to_string(dir.join(file)).unwrap_or_default();
    match file {
        "summary.txt" => text
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect::<Vec<_>>()
            .join(","),
        "summary.json" => {
            let v: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
            let mut keys: Vec<String> = v.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default();
            keys.sort();
            keys.join(",")
        }
        _ => text.lines().next().unwrap_or("").to_string(),
    }
}

fn c10_determinism_and_schema() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_barrier-lb");
    let tiny = [
        "--set", "workers=3", "--set", "batch=4", "--set", "max_steps=400", "--set", "iir.steps=300", "--set",
        "iir.warmup=20", "--set", "iir.trials=2", "--set", "iir.batch=2,4", "--set", "iir.workers=2,3", "--seed",
        "17", "--emit-steps",
    ];
    let commands: [&[&str]; 5] = [&["run"], &["compare", "fcfs,jsq,bfio-greedy"], &["sweep-h", "0,5"], &["sweep-g", "3"], &["iir"]];
    let roots = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for root in &roots {
        for (i, cmd) in commands.iter().enumerate() {
            let status = Command::new(bin)
                .args(*cmd)
                .args(tiny)
                .arg("--out")
                .arg(root.path().join(i.to_string()))
                .output()
                .unwrap()
                .status;
            if !status.success() {
                return outcome(false, format!("`{}` exited with {status}", cmd.join(" ")));
            }
        }
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for i in 0..commands.len() {
        let (a, b) = (roots[0].path().join(i.to_string()), roots[1].path().join(i.to_string()));
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            let strip = |p: &Path| -> Vec<u8> {
                let bytes = fs::read(p.join(&name)).unwrap();
                if name == "config.txt" {
                    // the echo names its own output directory
                    String::from_utf8(bytes)
                        .unwrap()
                        .lines()
                        .filter(|l| !l.starts_with("output = "))
                        .collect::<Vec<_>>()
                        .join("\n")
                        .into_bytes()
                } else {
                    bytes
                }
            };
            compared += 1;
            if strip(&a) != strip(&b) {
                differing.push(name.to_string_lossy().to_string());
            }
        }
    }
    let where_is = |file: &str| -> usize {
        match file {
            "summary.txt" | "summary.json" | "steps.csv" => 0,
            "compare.csv" => 1,
            "sweep_h.csv" => 2,
            "sweep_g.csv" => 3,
            _ => 4,
        }
    };
    let mut schema_errors = Vec::new();
    for (file, expected) in golden() {
        let got = schema_of(&roots[0].path().join(where_is(&file).to_string()), &file);
        if got != expected {
            schema_errors.push(format!("{file}: got `{got}`"));
        }
    }
    outcome(
        differing.is_empty() && schema_errors.is_empty() && compared > 0,
        format!(
            "{compared} files compared across reruns, differing: {:?}; golden schemas checked: {}, mismatches: {:?}",
            differing,
            golden().len(),
            schema_errors
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("exact solver equals brute force", c1_exact_matches_brute_force),
        ("full-refill gap within s_max", c2_full_refill_gap),
        ("workload conservation", || conservation(DriftSpec::unit())),
        ("policy ordering at desk scale", || policy_ordering(DriftSpec::unit())),
        ("lookahead H=20 vs H=0", c5_horizon),
        ("IIR grows with B and G", c6_iir_scaling),
        ("energy closed forms", c7_energy_closed_forms),
        ("energy saving grows with G", c8_energy_vs_scale),
        ("zero drift reruns of 3 and 4", c9_zero_drift),
        ("determinism and schemas", c10_determinism_and_schema),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{tag}] {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", criteria.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
