//! Train a small net, prune two layers with the full method, fine-tune and
//! print the per-layer report.

use thinner::data::{generate_synthetic, SyntheticSpec};
use thinner::finetune::{evaluate, train, TrainConfig};
use thinner::pipeline::{prune_network, uniform_schedule, Method, PruneConfig};
use thinner::{zoo, ModelGraph};

fn main() -> thinner::Result<()> {
    let shape = [3, 16, 16];
    let (train_set, test_set) = generate_synthetic(&SyntheticSpec::new(4, 75, shape), 11)?.split_at(200)?;
    let model = ModelGraph::init(zoo::toy_chain(shape, [16, 16, 16], 4)?, 11)?;
    let (model, _) = train(&model, &train_set, &TrainConfig::step_decay(20, 0.01, 11))?;
    println!("baseline test accuracy {:.3}", evaluate(&model, &test_set)?.accuracy);

    let cfg = PruneConfig {
        seed: 11,
        recovery: Some(TrainConfig::recovery(11)),
        final_tune: Some(TrainConfig::step_decay(5, 0.01, 11)),
        ..PruneConfig::default()
    };
    let (pruned, report) = prune_network(&model, Some(&train_set), &uniform_schedule(&["conv1", "conv2"], 0.5), Method::Thinet, &cfg)?;
    for s in &report.sites {
        println!(
            "{:<6} {:>2} -> {:>2} channels, relative error {:.4}",
            s.layer,
            s.channels,
            s.kept.len(),
            s.relative_error().unwrap_or(0.0)
        );
    }
    println!(
        "params {} -> {}, FLOPs {} -> {}",
        report.params_before, report.params_after, report.flops_before, report.flops_after
    );
    println!("pruned test accuracy {:.3}", evaluate(&pruned, &test_set)?.accuracy);
    report.write_csv(std::io::stdout())?;
    Ok(())
}
