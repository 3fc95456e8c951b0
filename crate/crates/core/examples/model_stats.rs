//! Per-layer parameter and FLOP tables for the built-in architectures.

use thinner::metrics::cost_report;
use thinner::zoo;

fn main() -> thinner::Result<()> {
    for arch in [zoo::vgg16(1000)?, zoo::vgg16_gap(1000)?, zoo::resnet50(1000)?] {
        let r = cost_report(&arch)?;
        if arch.name == "vgg16" {
            println!("{}", r.to_table());
        }
        println!(
            "{:<10} {:>8.2}M params {:>7.2}B FLOPs\n",
            r.model,
            r.total_params as f64 / 1e6,
            r.total_flops as f64 / 1e9
        );
    }
    Ok(())
}
