//! Imbalance improvement ratio over a small (B, G) grid.

use barrier_lb::oracle::{estimate_iir, IirSpec};
use barrier_lb::workload::DecodeDistribution;

fn main() -> barrier_lb::Result<()> {
    let grid = [(4, 4), (8, 4), (16, 4), (8, 8), (8, 16)];
    for (label, decode) in [
        ("fixed decode 50", DecodeDistribution::Fixed(50)),
        ("geometric p=0.02", DecodeDistribution::Geometric { p: 0.02 }),
    ] {
        let spec = IirSpec {
            decode,
            ..IirSpec::default()
        };
        let est = estimate_iir(&grid, &spec, 8, 1)?;
        println!("# {label}");
        print!("{}", est.to_csv());
        for c in est.cells.iter().filter(|c| c.outside_regime) {
            println!("# B={} G={} is outside the sqrt(G) << B regime", c.batch, c.workers);
        }
    }
    Ok(())
}
