//! SGD with step decay on the synthetic dataset.

use thinner::data::{generate_synthetic, SyntheticSpec};
use thinner::finetune::{evaluate, train, write_history_csv, TrainConfig};
use thinner::{zoo, ModelGraph};

fn main() -> thinner::Result<()> {
    let shape = [3, 16, 16];
    let mut spec = SyntheticSpec::new(4, 75, shape);
    spec.noise = 0.8;
    let (train_set, test_set) = generate_synthetic(&spec, 31)?.split_at(200)?;
    let model = ModelGraph::init(zoo::toy_chain(shape, [8, 8, 8], 4)?, 31)?;
    println!("before: {:.3}", evaluate(&model, &test_set)?.accuracy);

    let cfg = TrainConfig::step_decay(12, 0.01, 31);
    let (model, history) = train(&model, &train_set, &cfg)?;
    write_history_csv(&history, std::io::stdout())?;
    println!("after: {:.3}", evaluate(&model, &test_set)?.accuracy);
    Ok(())
}
