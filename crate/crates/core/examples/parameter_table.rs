//! Builds every architecture at its default width and compares the
//! trainable parameter counts with the reference counts.
//!
//! ```text
//! cargo run --example parameter_table
//! ```

use segzoo::models::{count_parameters, Arch, Model, ModelConfig};
use segzoo::report::param_table;

fn main() -> segzoo::Result<()> {
    let reports = Arch::ALL
        .iter()
        .map(|&a| {
            Ok(count_parameters(&Model::<f32>::new(
                ModelConfig::new(a),
                0,
            )?))
        })
        .collect::<segzoo::Result<Vec<_>>>()?;
    println!(
        "{:<22} {:>10} {:>10} {:>8} {:>6}",
        "model", "params", "reference", "delta%", "tol%"
    );
    for (row, arch) in param_table(&reports).iter().zip(Arch::ALL) {
        println!(
            "{:<22} {:>10} {:>10} {:>+8.2} {:>6.1}{}",
            arch.display_name(),
            row.params,
            row.reference,
            row.delta_pct,
            row.tolerance_pct,
            if row.within_tolerance {
                ""
            } else {
                "  out of tolerance"
            }
        );
    }

    let fau = &reports[Arch::ALL
        .iter()
        .position(|&a| a == Arch::FauNet)
        .unwrap_or(0)];
    println!("\nlargest FAU-Net layers:");
    let mut layers = fau.layers.clone();
    layers.sort_by_key(|l| std::cmp::Reverse(l.1));
    for (name, count) in layers.iter().take(5) {
        println!("  {name:<28} {count:>9}");
    }
    Ok(())
}
