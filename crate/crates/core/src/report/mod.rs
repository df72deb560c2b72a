//! Result tables and figures rendered to CSV and PNG.

mod font;
mod raster;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use raster::{Canvas, Rgb, BLACK, DARK_GRAY, GRAY, RED, WHITE};

use crate::data::{LabelMap, Sample, ZoneCombo, CLASS_COLORS, CLASS_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::{zone_summary, MetricRecord, ZoneSummary, FOREGROUND};
use crate::models::ParamReport;

/// Box fill colours per model, in registry order; none of them is red.
pub const MODEL_COLORS: [Rgb; 7] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

fn model_color(i: usize) -> Rgb {
    MODEL_COLORS[i % MODEL_COLORS.len()]
}

/// One model's per-image records.
#[derive(Clone, Debug)]
pub struct ModelRecords {
    pub name: String,
    pub records: Vec<MetricRecord>,
}

/// What a boxplot figure contains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxplotLayout {
    pub zones: usize,
    pub models: usize,
    /// One box per (zone, model) pair with data.
    pub groups: usize,
    /// Index of the best model by mean IoU, per drawn zone.
    pub best: Vec<(u8, usize)>,
}

const PLOT_TOP: i64 = 50;
const PLOT_HEIGHT: i64 = 360;
const PLOT_LEFT: i64 = 70;
const SLOT: i64 = 30;
const ZONE_GAP: i64 = 40;

fn y_of(v: f64) -> i64 {
    PLOT_TOP + PLOT_HEIGHT - (v.clamp(0.0, 1.0) * PLOT_HEIGHT as f64).round() as i64
}

/// Deterministic horizontal jitter in `[-1, 1]`.
fn jitter(i: usize) -> f64 {
    let h = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
    (h as f64 / (1u64 << 24) as f64) * 2.0 - 1.0
}

/// Per-zone IoU boxplots grouped by model: median line, quartile box,
/// whiskers, every image as a dot, outliers hollow, and the best model of
/// each zone (highest mean IoU) outlined in red.
pub fn iou_boxplot(models: &[ModelRecords]) -> Result<(Canvas, BoxplotLayout)> {
    if models.is_empty() || models.iter().all(|m| m.records.is_empty()) {
        return Err(Error::Dataset("no metric records to plot".into()));
    }
    let zones: Vec<(u8, Vec<Option<ZoneSummary>>)> = FOREGROUND
        .iter()
        .map(|&k| {
            (
                k,
                models
                    .iter()
                    .map(|m| zone_summary(&m.records, k))
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, s)| s.iter().any(Option::is_some))
        .collect();
    let zone_width = models.len() as i64 * SLOT;
    let legend_width = 230;
    let width = PLOT_LEFT + zones.len() as i64 * (zone_width + ZONE_GAP) + legend_width;
    let height = PLOT_TOP + PLOT_HEIGHT + 60;
    let mut c = Canvas::new(
        width as usize,
        height.max(PLOT_TOP + 40 + 22 * (models.len() as i64 + 2)) as usize,
        WHITE,
    );

    c.text(PLOT_LEFT, 15, "IOU PER ZONE", 2, BLACK);
    for t in 0..=10 {
        let v = t as f64 / 10.0;
        let y = y_of(v);
        c.hline(
            PLOT_LEFT,
            width - legend_width,
            y,
            if t % 5 == 0 { GRAY } else { [235, 235, 235] },
        );
        if t % 2 == 0 {
            let label = format!("{v:.1}");
            c.text(
                PLOT_LEFT - 8 - Canvas::text_width(&label, 1) as i64,
                y - 3,
                &label,
                1,
                BLACK,
            );
        }
    }
    c.vline(PLOT_LEFT, PLOT_TOP, PLOT_TOP + PLOT_HEIGHT, BLACK);

    let mut groups = 0;
    let mut best = Vec::new();
    for (zi, (k, summaries)) in zones.iter().enumerate() {
        let x0 = PLOT_LEFT + ZONE_GAP / 2 + zi as i64 * (zone_width + ZONE_GAP);
        let name = CLASS_NAMES[*k as usize];
        c.text(
            x0 + zone_width / 2 - Canvas::text_width(name, 2) as i64 / 2,
            PLOT_TOP + PLOT_HEIGHT + 12,
            name,
            2,
            BLACK,
        );
        let winner = summaries
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s.mean)))
            .fold(None, |acc: Option<(usize, f64)>, (i, m)| match acc {
                Some((_, bm)) if bm >= m => acc,
                _ => Some((i, m)),
            });
        for (mi, s) in summaries.iter().enumerate() {
            let Some(s) = s else { continue };
            groups += 1;
            let bx = x0 + mi as i64 * SLOT + 4;
            let bw = SLOT - 8;
            let mid = bx + bw / 2;
            let color = model_color(mi);
            c.vline(mid, y_of(s.whisker_low), y_of(s.q1), DARK_GRAY);
            c.vline(mid, y_of(s.q3), y_of(s.whisker_high), DARK_GRAY);
            c.hline(mid - bw / 4, mid + bw / 4, y_of(s.whisker_low), DARK_GRAY);
            c.hline(mid - bw / 4, mid + bw / 4, y_of(s.whisker_high), DARK_GRAY);
            let (top, bottom) = (y_of(s.q3), y_of(s.q1));
            c.fill_rect(bx, top, bw, (bottom - top).max(1), color);
            c.outline(bx, top, bw, (bottom - top).max(1), 1, BLACK);
            c.fill_rect(bx, y_of(s.median) - 1, bw, 3, BLACK);
            for (i, &v) in s.values.iter().enumerate() {
                let x = mid + (jitter(i) * (bw as f64 / 2.0 - 2.0)).round() as i64;
                if s.outliers.contains(&v) {
                    c.dot(x, y_of(v), 3, BLACK);
                    c.dot(x, y_of(v), 2, WHITE);
                } else {
                    c.dot(x, y_of(v), 2, BLACK);
                }
            }
            if winner.map(|(w, _)| w) == Some(mi) {
                c.outline(bx - 3, top - 3, bw + 6, (bottom - top).max(1) + 6, 2, RED);
                best.push((*k, mi));
            }
        }
    }

    let lx = width - legend_width + 20;
    let mut ly = PLOT_TOP;
    for (mi, m) in models.iter().enumerate() {
        c.fill_rect(lx, ly, 14, 14, model_color(mi));
        c.outline(lx, ly, 14, 14, 1, BLACK);
        c.text(lx + 22, ly + 4, &m.name, 1, BLACK);
        ly += 22;
    }
    ly += 8;
    c.outline(lx - 2, ly - 2, 18, 18, 2, RED);
    c.text(lx + 22, ly + 4, "BEST MEAN IOU", 1, BLACK);

    let layout = BoxplotLayout {
        zones: zones.len(),
        models: models.len(),
        groups,
        best,
    };
    Ok((c, layout))
}

/// One model's predictions for the grid columns, in column order.
#[derive(Clone, Debug)]
pub struct ModelPredictions {
    pub name: String,
    pub labels: Vec<LabelMap>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub panels: usize,
}

/// First sample of each zone combination, in combination order.
pub fn grid_examples<'a>(samples: &[&'a Sample]) -> Vec<&'a Sample> {
    ZoneCombo::ALL
        .iter()
        .filter_map(|combo| samples.iter().find(|s| s.combo == *combo).copied())
        .collect()
}

const PANEL_MAX: usize = 160;
const LABEL_COL: i64 = 190;
const HEADER: i64 = 40;
const PAD: i64 = 6;

/// Rows: input, ground truth, then one per model; columns: `examples`.
pub fn prediction_grid(
    examples: &[&Sample],
    models: &[ModelPredictions],
) -> Result<(Canvas, GridLayout)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Dataset("no examples for the prediction grid".into()))?;
    let size = first.image.width().max(first.image.height());
    let step = size.div_ceil(PANEL_MAX).max(1);
    let panel = size.div_ceil(step) as i64;
    for m in models {
        if m.labels.len() != examples.len() {
            return Err(Error::Shape(format!(
                "{} has {} predictions for {} examples",
                m.name,
                m.labels.len(),
                examples.len()
            )));
        }
    }
    let rows = 2 + models.len();
    let cols = examples.len();
    let legend_h = 40;
    let width = LABEL_COL + cols as i64 * (panel + PAD) + PAD;
    let height = HEADER + rows as i64 * (panel + PAD) + legend_h;
    let mut c = Canvas::new(width as usize, height as usize, WHITE);

    for (j, s) in examples.iter().enumerate() {
        let x = LABEL_COL + j as i64 * (panel + PAD);
        let code = s.combo.code();
        c.text(
            x + panel / 2 - Canvas::text_width(code, 2) as i64 / 2,
            12,
            code,
            2,
            BLACK,
        );
    }
    let mut names = vec!["INPUT".to_owned(), "GROUND TRUTH".to_owned()];
    names.extend(models.iter().map(|m| m.name.clone()));
    for (i, name) in names.iter().enumerate() {
        let y = HEADER + i as i64 * (panel + PAD);
        c.text(10, y + panel / 2 - 3, name, 1, BLACK);
        for (j, s) in examples.iter().enumerate() {
            let x = LABEL_COL + j as i64 * (panel + PAD);
            match i {
                0 => c.blit_image(x, y, &s.image, step),
                1 => c.blit_labels(x, y, &s.mask, step),
                _ => c.blit_labels(x, y, &models[i - 2].labels[j], step),
            }
        }
    }

    let mut lx = 10;
    let ly = height - legend_h + 12;
    for k in 0..NUM_CLASSES {
        c.fill_rect(lx, ly, 14, 14, CLASS_COLORS[k]);
        c.outline(lx, ly, 14, 14, 1, DARK_GRAY);
        c.text(lx + 20, ly + 4, CLASS_NAMES[k], 1, BLACK);
        lx += 20 + Canvas::text_width(CLASS_NAMES[k], 1) as i64 + 24;
    }
    Ok((
        c,
        GridLayout {
            rows,
            cols,
            panels: rows * cols,
        },
    ))
}

/// Parameter-count table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub arch: String,
    pub params: usize,
    pub reference: usize,
    pub delta_pct: f64,
    pub tolerance_pct: f64,
    pub within_tolerance: bool,
    /// 1-based rank by measured count.
    pub order: usize,
    /// 1-based rank by reference count.
    pub reference_order: usize,
}

fn rank_of<T: PartialOrd>(values: &[T], i: usize) -> usize {
    1 + values.iter().filter(|v| **v < values[i]).count()
}

pub fn param_table(reports: &[ParamReport]) -> Vec<ParamRow> {
    let measured: Vec<usize> = reports.iter().map(|r| r.total).collect();
    let reference: Vec<usize> = reports.iter().map(|r| r.arch.reference_params()).collect();
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| ParamRow {
            arch: r.arch.name().to_owned(),
            params: r.total,
            reference: r.arch.reference_params(),
            delta_pct: 100.0 * r.relative_delta(),
            tolerance_pct: 100.0 * r.arch.param_tolerance(),
            within_tolerance: r.within_tolerance(),
            order: rank_of(&measured, i),
            reference_order: rank_of(&reference, i),
        })
        .collect()
}

/// Performance table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub arch: String,
    pub iou: f64,
    pub dsc: f64,
    pub loss: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::data(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, class: u8, iou: f64) -> MetricRecord {
        MetricRecord {
            image_id: id.into(),
            class_id: class,
            dsc: Some(2.0 * iou / (1.0 + iou)),
            iou: Some(iou),
            present_in_gt: true,
        }
    }

    #[test]
    fn four_models_by_four_zones_make_sixteen_groups() {
        let models: Vec<ModelRecords> = (0..4)
            .map(|m| ModelRecords {
                name: format!("M{m}"),
                records: (0..5)
                    .flat_map(|i| {
                        FOREGROUND
                            .map(|k| record(&format!("i{i}"), k, 0.1 * m as f64 + 0.05 * i as f64))
                    })
                    .collect(),
            })
            .collect();
        let (canvas, layout) = iou_boxplot(&models).unwrap();
        assert_eq!(layout.groups, 16);
        assert_eq!(layout.best, vec![(1, 3), (2, 3), (3, 3), (4, 3)]);
        assert!(canvas.width() > 0);
        assert!(iou_boxplot(&[]).is_err());
    }

    #[test]
    fn grid_of_four_combos_and_seven_models_has_36_panels() {
        let data = crate::data::generate_dataset_sized(1, 8, 32).unwrap();
        let samples: Vec<&Sample> = data.samples.iter().collect();
        let examples = grid_examples(&samples);
        assert_eq!(
            examples.iter().map(|s| s.combo).collect::<Vec<_>>(),
            ZoneCombo::ALL
        );
        let models: Vec<ModelPredictions> = (0..7)
            .map(|m| ModelPredictions {
                name: format!("M{m}"),
                labels: examples.iter().map(|s| s.mask.clone()).collect(),
            })
            .collect();
        let (canvas, layout) = prediction_grid(&examples, &models).unwrap();
        assert_eq!((layout.rows, layout.cols, layout.panels), (9, 4, 36));
        let colors: std::collections::HashSet<Rgb> = (0..canvas.height())
            .flat_map(|y| (0..canvas.width()).map(move |x| (x, y)))
            .map(|(x, y)| canvas.pixel(x, y))
            .collect();
        assert!(CLASS_COLORS.iter().all(|c| colors.contains(c)));
        let (again, _) = prediction_grid(&examples, &models).unwrap();
        assert_eq!(again, canvas);
    }

    #[test]
    fn ranks_follow_counts() {
        assert_eq!(rank_of(&[5, 1, 3], 0), 3);
        assert_eq!(rank_of(&[5, 1, 3], 1), 1);
    }
}
