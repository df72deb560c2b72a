//! Trains one architecture on freshly generated phantoms and reports the
//! held-out scores.
//!
//! ```text
//! cargo run --release --example train_phantoms -- [arch] [epochs] [total] [size]
//! cargo run --release --example train_phantoms -- fau_net 30 80 256
//! ```

use segzoo::data::{generate_dataset_sized, stratified_split, Split, CLASS_NAMES};
use segzoo::metrics::{evaluate, zone_summary, FOREGROUND};
use segzoo::models::{Arch, Model, ModelConfig};
use segzoo::train::{train, TrainConfig, TrainOptions};

fn main() -> segzoo::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arch: Arch = args
        .first()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(Arch::FauNet);
    let arg =
        |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (epochs, total, size) = (arg(1, 3), arg(2, 20), arg(3, 128));
    let seed = 7;

    let mut data = generate_dataset_sized(seed, total, size)?;
    let split = stratified_split(&data.manifest, 0.8, seed)?;
    data.apply_split(&split);
    println!(
        "{total} phantoms at {size}x{size}: {} train / {} test",
        split.count(Split::Train),
        split.count(Split::Test)
    );

    let mut model = Model::<f32>::new(ModelConfig::new(arch), seed)?;
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let options = TrainOptions {
        out_dir: None,
        verbose: true,
    };
    let outcome = train(&mut model, &data, &config, &options)?;
    println!("best epoch by test loss: {}", outcome.best_epoch);

    let eval = evaluate(&model, &data.split(Split::Test), 4)?;
    println!(
        "final model: mean IoU {:.4}, mean DSC {:.4}, loss {:.4}",
        eval.mean_iou, eval.mean_dsc, eval.mean_loss
    );
    for k in FOREGROUND {
        if let Some(z) = zone_summary(&eval.records, k) {
            println!(
                "  {:<3} n={:<3} mean IoU {:.4} median {:.4}",
                CLASS_NAMES[k as usize], z.count, z.mean, z.median
            );
        }
    }
    Ok(())
}
