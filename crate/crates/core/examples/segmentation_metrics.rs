//! Scores a hand-made prediction against its ground truth with per-class
//! Dice and IoU, then summarizes IoU per zone the way the boxplot does.
//!
//! ```text
//! cargo run --example segmentation_metrics
//! ```

use segzoo::data::{LabelMap, CLASS_NAMES};
use segzoo::metrics::{confusion_counts, image_records, mean_scores, zone_summary, FOREGROUND};

fn square(size: usize, boxes: &[(usize, usize, usize, u8)]) -> segzoo::Result<LabelMap> {
    let mut labels = vec![0u8; size * size];
    for &(x0, y0, edge, class) in boxes {
        for y in y0..y0 + edge {
            for x in x0..x0 + edge {
                labels[y * size + x] = class;
            }
        }
    }
    LabelMap::new(size, size, labels)
}

fn main() -> segzoo::Result<()> {
    let gt = square(16, &[(2, 2, 8, 1), (10, 10, 4, 2), (4, 4, 3, 4)])?;
    let pred = square(16, &[(3, 2, 8, 1), (10, 10, 3, 2), (11, 12, 2, 3)])?;

    let c = confusion_counts(&pred, &gt)?;
    println!("confusion (rows gt, cols pred):");
    for (name, row) in CLASS_NAMES.iter().zip(c) {
        println!("  {name:<4} {row:?}");
    }

    let records = image_records("toy", &pred, &gt)?;
    println!("\n{:<4} {:>8} {:>8} {:>8}", "zone", "present", "dsc", "iou");
    for r in &records {
        let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.4}"));
        println!(
            "{:<4} {:>8} {:>8} {:>8}",
            CLASS_NAMES[r.class_id as usize],
            r.present_in_gt,
            fmt(r.dsc),
            fmt(r.iou)
        );
    }
    let (iou, dsc) = mean_scores(&records);
    println!("mean over present zones: IoU {iou:.4}, DSC {dsc:.4}");

    for k in FOREGROUND {
        if let Some(z) = zone_summary(&records, k) {
            println!(
                "{} summary: n={} median {:.4}",
                CLASS_NAMES[k as usize], z.count, z.median
            );
        }
    }
    Ok(())
}
