//! The exact BF-IO search, the greedy approximation and the brute-force
//! oracle on one hand-sized step.

use barrier_lb::lookahead::LookaheadView;
use barrier_lb::oracle::{brute_force_best, enumerate_allocations, window_cost};
use barrier_lb::policies::{bfio_assign_exact, bfio_assign_greedy, fcfs_assign, StepView};
use barrier_lb::workload::WorkloadProfile;

fn main() -> barrier_lb::Result<()> {
    // two workers already running (load now, load next step)
    let base = vec![vec![30.0, 31.0], vec![12.0, 0.0]];
    let profiles: Vec<WorkloadProfile> = [(7, 3), (19, 1), (4, 6), (11, 2)]
        .iter()
        .map(|(s, o)| WorkloadProfile::llm(*s, *o))
        .collect::<barrier_lb::Result<_>>()?;
    let waiting = [0, 1, 2, 3];
    let lookahead = LookaheadView::perfect(1);
    let view = StepView {
        caps: &[1, 2],
        active_counts: &[3, 2],
        base: &base,
        waiting: &waiting,
        profiles: &profiles,
        lookahead: &lookahead,
    };

    let all = enumerate_allocations(&waiting, view.caps, 10_000)?;
    println!("{} feasible allocations", all.len());
    let (best, j) = brute_force_best(&view, 10_000)?;
    println!("oracle   J = {j:>5}  {:?}", best.vector(&waiting));
    let exact = bfio_assign_exact(&view, 10_000)?;
    println!("exact    J = {:>5}  {:?}", window_cost(&view, &exact), exact.vector(&waiting));
    let greedy = bfio_assign_greedy(&view, 512);
    println!("greedy   J = {:>5}  {:?}", window_cost(&view, &greedy), greedy.vector(&waiting));
    let fcfs = fcfs_assign(&waiting, view.caps);
    println!("fcfs     J = {:>5}  {:?}", window_cost(&view, &fcfs), fcfs.vector(&waiting));
    Ok(())
}
