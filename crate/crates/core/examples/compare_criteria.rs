//! All selection criteria on the same trained net at a few rates.

use thinner::data::{generate_synthetic, SyntheticSpec};
use thinner::finetune::{train, TrainConfig};
use thinner::pipeline::{compare_methods, write_compare_csv, Method, PruneConfig};
use thinner::{zoo, ModelGraph};

fn main() -> thinner::Result<()> {
    let shape = [3, 16, 16];
    let (train_set, test_set) = generate_synthetic(&SyntheticSpec::new(4, 75, shape), 21)?.split_at(200)?;
    let model = ModelGraph::init(zoo::toy_chain(shape, [16, 16, 16], 4)?, 21)?;
    let (model, _) = train(&model, &train_set, &TrainConfig::step_decay(20, 0.01, 21))?;

    let layers = vec!["conv1".to_string(), "conv2".to_string()];
    let cfg = PruneConfig { seed: 21, ..PruneConfig::default() };
    let rows = compare_methods(&model, &train_set, Some(&test_set), &layers, &Method::ALL, &[0.5, 0.25], &cfg)?;
    write_compare_csv(&rows, std::io::stdout())?;
    Ok(())
}
