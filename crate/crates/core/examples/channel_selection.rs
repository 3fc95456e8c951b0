//! Collect next-layer samples for one site and compare greedy removal with
//! exhaustive search and the score-based criteria.

use thinner::data::{generate_synthetic, SyntheticSpec};
use thinner::sampling::{collect_samples, reconstruction_error, PruneSite};
use thinner::selection::{brute_force_select, criterion_random, criterion_weight_sum, greedy_select, select_by_score};
use thinner::{zoo, ModelGraph};

fn main() -> thinner::Result<()> {
    let model = ModelGraph::init(zoo::toy_chain([3, 16, 16], [10, 12, 8], 4)?, 1)?;
    let data = generate_synthetic(&SyntheticSpec::new(4, 20, [3, 16, 16]), 2)?;
    let site = PruneSite::resolve(&model.arch, "conv1")?;
    let samples = collect_samples(&model, &data, &site, 50, 10, 3)?;
    println!("{} -> {}: {} samples over {} channels", site.layer, site.next, samples.rows(), samples.channels);

    let rate = 0.5;
    let greedy = greedy_select(&samples, rate)?;
    let brute = brute_force_select(&samples, rate)?;
    let weight_sum = select_by_score(&criterion_weight_sum(&model, "conv1")?, rate, true)?;
    let random = criterion_random(samples.channels, rate, 4)?;
    for (name, sel) in [("greedy", &greedy), ("brute force", &brute), ("weight sum", &weight_sum), ("random", &random)] {
        let err = reconstruction_error(&samples, &sel.kept, None)?;
        println!("{name:<12} kept {:?} error {:.4}", sel.kept, err / samples.energy());
    }
    println!("greedy removal order {:?}", greedy.removed);
    Ok(())
}
