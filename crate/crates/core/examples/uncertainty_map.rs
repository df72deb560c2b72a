//! Fits a small FAU-Net to a handful of phantoms, then writes its label map
//! and the per-pixel predictive entropy as PNG images.
//!
//! ```text
//! cargo run --release --example uncertainty_map -- [out_dir]
//! ```

use std::path::PathBuf;

use segzoo::data::{generate_dataset_sized, image_to_png, write_mask, Image};
use segzoo::metrics::{softmax, uncertainty_map};
use segzoo::models::{argmax_labels, image_batch, Arch, Model, ModelConfig};
use segzoo::train::{train_step, Adam, TrainConfig};

fn main() -> segzoo::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("segzoo_uncertainty"));
    std::fs::create_dir_all(&out).map_err(|e| segzoo::Error::io(&out, e))?;

    let data = generate_dataset_sized(3, 8, 64)?;
    let samples: Vec<_> = data.samples.iter().collect();
    let mut model = Model::<f32>::new(ModelConfig::new(Arch::FauNet).with_base_channels(8), 0)?;
    let config = TrainConfig {
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let mut adam = Adam::new(model.params(), &config);
    for step in 0..60 {
        let loss = train_step(&mut model, &mut adam, &samples[..4])?;
        if step % 10 == 0 {
            println!("step {step:>3} loss {loss:.4}");
        }
    }

    let sample = samples[5];
    let logits = model.logits(image_batch(&[&sample.image])?)?;
    let entropy = uncertainty_map(&softmax(&logits))?;
    let max = entropy.data().iter().copied().fold(0.0, f64::max);
    let mean = entropy.data().iter().sum::<f64>() / entropy.numel() as f64;
    println!(
        "entropy on held-out {}: mean {mean:.4}, max {max:.4} nats",
        sample.id
    );

    let scale = (5f64).ln();
    let ent = Image::new(
        64,
        64,
        entropy.data().iter().map(|v| (v / scale) as f32).collect(),
    )?;
    let ent_path = out.join("entropy.png");
    std::fs::write(&ent_path, image_to_png(&ent)).map_err(|e| segzoo::Error::io(&ent_path, e))?;
    write_mask(&out.join("prediction.png"), &argmax_labels(&logits)[0])?;
    println!("wrote {} and prediction.png", ent_path.display());
    Ok(())
}
