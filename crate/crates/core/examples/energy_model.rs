//! The power curve and the energy-saving lower bound.

use barrier_lb::metrics::{energy_saving_lower_bound, mfu_from_throughput, power, PowerModel};

fn main() -> barrier_lb::Result<()> {
    let model = PowerModel::default();
    println!("C_gamma = {}, D_gamma = {}", model.c_gamma(), model.d_gamma());
    for u in [0.0, 0.1, 0.25, 0.5, 0.75, 1.0] {
        println!("power({u:.2}) = {:.2} W", power(u, &model)?);
    }

    let mfu = mfu_from_throughput(2500.0, 7e9, 3.12e14);
    println!("2500 tok/s on a 7B model at 312 TFLOP/s: mfu {mfu:.3}, {:.1} W", model.power_at_mfu(mfu)?);

    println!("\nsaving bound by improvement ratio (rows) and normalized imbalance (columns)");
    let etas = [0.05, 0.2, 1.0, f64::INFINITY];
    println!("{:>8} {}", "alpha", etas.map(|e| format!("{e:>8}")).join(""));
    for alpha in [1.0, 2.0, 5.0, 15.0, f64::INFINITY] {
        let row: String = etas
            .iter()
            .map(|e| format!("{:>8.4}", energy_saving_lower_bound(alpha, *e, &model)))
            .collect();
        println!("{alpha:>8} {row}");
    }
    Ok(())
}
