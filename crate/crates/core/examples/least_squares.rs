//! Least-squares rescaling of the kept channels and the effect of folding it
//! into the next layer.

use thinner::data::{generate_synthetic, SyntheticSpec};
use thinner::exec::forward;
use thinner::lsq::least_squares_weights;
use thinner::sampling::{collect_samples, reconstruction_error, PruneSite};
use thinner::selection::greedy_select;
use thinner::surgery::{fold_scaling, prune_layer_pair};
use thinner::{zoo, ModelGraph};

fn main() -> thinner::Result<()> {
    let model = ModelGraph::init(zoo::toy_chain([3, 16, 16], [16, 16, 8], 4)?, 5)?;
    let data = generate_synthetic(&SyntheticSpec::new(4, 20, [3, 16, 16]), 6)?;
    let site = PruneSite::resolve(&model.arch, "conv2")?;
    let samples = collect_samples(&model, &data, &site, 60, 10, 7)?;

    for rate in [0.75, 0.5, 0.25] {
        let sel = greedy_select(&samples, rate)?;
        let w = least_squares_weights(&samples, &sel.kept)?;
        let plain = reconstruction_error(&samples, &sel.kept, None)?;
        let scaled = reconstruction_error(&samples, &sel.kept, Some(w.as_slice()))?;
        println!("rate {rate}: keep {:>2}, error {:.4} -> {:.4}", sel.kept.len(), plain / samples.energy(), scaled / samples.energy());
        if rate == 0.5 {
            let w_str: Vec<String> = w.as_slice().iter().map(|v| format!("{v:.3}")).collect();
            println!("  w = [{}]", w_str.join(", "));
        }
    }

    // the pruned, rescaled model and the full model on the same batch
    let sel = greedy_select(&samples, 0.5)?;
    let w = least_squares_weights(&samples, &sel.kept)?;
    let pruned = prune_layer_pair(&fold_scaling(&model, &site, &sel.kept, &w)?, &site, &sel.kept)?;
    let x = data.images.gather_samples(&[0, 1, 2, 3])?;
    println!("logit drift after pruning half of conv2: {:.4}", forward(&pruned, &x)?.max_abs_diff(&forward(&model, &x)?));
    Ok(())
}
