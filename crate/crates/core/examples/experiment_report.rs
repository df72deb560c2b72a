//! Renders the IoU boxplot and the prediction grid from two scorers: a
//! stub that echoes the ground truth and an untrained U-Net.
//!
//! ```text
//! cargo run --release --example experiment_report -- [out_dir]
//! ```

use std::path::PathBuf;

use segzoo::data::{generate_dataset_sized, stratified_split, Split};
use segzoo::metrics::{evaluate, GroundTruthEcho};
use segzoo::models::{predict_labels, Arch, Model, ModelConfig};
use segzoo::report::{grid_examples, iou_boxplot, prediction_grid, ModelPredictions, ModelRecords};

fn main() -> segzoo::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("segzoo_report"));
    std::fs::create_dir_all(&out).map_err(|e| segzoo::Error::io(&out, e))?;

    let mut data = generate_dataset_sized(11, 24, 64)?;
    let split = stratified_split(&data.manifest, 0.5, 11)?;
    data.apply_split(&split);
    let test = data.split(Split::Test);

    let unet = Model::<f32>::new(ModelConfig::new(Arch::Unet).with_base_channels(4), 0)?;
    let echo = evaluate(&GroundTruthEcho, &test, 4)?;
    let untrained = evaluate(&unet, &test, 4)?;
    println!(
        "ground-truth echo: IoU {:.3}, DSC {:.3}",
        echo.mean_iou, echo.mean_dsc
    );
    println!(
        "untrained U-Net:   IoU {:.3}, DSC {:.3}",
        untrained.mean_iou, untrained.mean_dsc
    );

    let models = [
        ModelRecords {
            name: "Echo".into(),
            records: echo.records,
        },
        ModelRecords {
            name: "U-Net".into(),
            records: untrained.records,
        },
    ];
    let (canvas, layout) = iou_boxplot(&models)?;
    canvas.save(&out.join("iou_boxplot.png"))?;
    println!(
        "boxplot: {} groups, best per zone {:?}",
        layout.groups, layout.best
    );

    let examples = grid_examples(&test);
    let images: Vec<_> = examples.iter().map(|s| &s.image).collect();
    let preds = [ModelPredictions {
        name: "U-Net".into(),
        labels: predict_labels(&unet, &images)?,
    }];
    let (canvas, layout) = prediction_grid(&examples, &preds)?;
    canvas.save(&out.join("predictions.png"))?;
    println!(
        "grid: {} rows x {} cols, written to {}",
        layout.rows,
        layout.cols,
        out.display()
    );
    Ok(())
}
