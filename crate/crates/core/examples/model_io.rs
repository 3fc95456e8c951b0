//! Save and reload a model (JSON manifest plus binary blob) and a dataset.

use thinner::data::{generate_synthetic, SyntheticSpec};
use thinner::exec::forward;
use thinner::io::{blob_path, load_dataset, load_model, save_dataset, save_model};
use thinner::{zoo, ModelGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("thinner-model-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let model = ModelGraph::init(zoo::toy_resnet([3, 16, 16], 4)?, 41)?;
    let path = dir.join("model.json");
    save_model(&model, &path)?;
    let back = load_model(&path)?;
    println!(
        "{}: {} bytes manifest, {} bytes blob",
        back.arch.name,
        std::fs::metadata(&path)?.len(),
        std::fs::metadata(blob_path(&path))?.len()
    );

    let data = generate_synthetic(&SyntheticSpec::new(4, 5, [3, 16, 16]), 41)?;
    save_dataset(&data, dir.join("data.thds"))?;
    let data_back = load_dataset(dir.join("data.thds"), Some(4))?;
    println!("dataset: {} images, labels equal: {}", data_back.len(), data_back.labels == data.labels);

    let x = data.images.gather_samples(&[0, 1])?;
    println!("forward identical after reload: {}", forward(&model, &x)?.max_abs_diff(&forward(&back, &x)?) == 0.0);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
