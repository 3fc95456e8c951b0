//! Prunable sites inside residual blocks, and pruning a small residual net
//! without touching block outputs.

use thinner::data::{generate_synthetic, SyntheticSpec};
use thinner::pipeline::{prune_network, Method, PruneConfig, ScheduleEntry};
use thinner::surgery::resnet_block_sites;
use thinner::{zoo, ModelGraph};

fn main() -> thinner::Result<()> {
    let sites = resnet_block_sites(&zoo::resnet50(1000)?);
    println!("resnet50: {} sites, first block:", sites.len());
    for s in &sites[..2] {
        println!("  {} -> {}", s.layer, s.next);
    }

    let model = ModelGraph::init(zoo::toy_resnet([3, 16, 16], 4)?, 3)?;
    let data = generate_synthetic(&SyntheticSpec::new(4, 20, [3, 16, 16]), 3)?;
    let schedule: Vec<ScheduleEntry> = resnet_block_sites(&model.arch)
        .into_iter()
        .map(|s| ScheduleEntry { layer: s.layer, rate: 0.5 })
        .collect();
    let (pruned, report) = prune_network(&model, Some(&data), &schedule, Method::Thinet, &PruneConfig::default())?;
    for s in &report.sites {
        println!("{:<18} {:>2} -> {:>2}", s.layer, s.channels, s.kept.len());
    }
    let shapes = pruned.arch.infer_shapes()?;
    println!("output shape unchanged: {}", shapes[pruned.arch.output_index()]);
    Ok(())
}
