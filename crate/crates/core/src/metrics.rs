//! Presence-aware per-class DSC and IoU, aggregation and predictive entropy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, Sample, CLASS_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::graph::softmax_cross_entropy;
use crate::models::{argmax_labels, image_batch, Model};
use crate::tensor::{Float, Shape, Tensor};

/// Foreground classes scored by every metric.
pub const FOREGROUND: [u8; 4] = [1, 2, 3, 4];

/// `counts[gt][pred]` pixel counts.
pub type Confusion = [[u64; NUM_CLASSES]; NUM_CLASSES];

fn check_same_shape(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

pub fn confusion_counts(pred: &LabelMap, gt: &LabelMap) -> Result<Confusion> {
    check_same_shape(pred, gt)?;
    let mut c = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        c[g as usize][p as usize] += 1;
    }
    Ok(c)
}

/// `(|A∩B|, |A|, |B|)` for gt set A and predicted set B of `class`.
fn overlap(c: &Confusion, class: u8) -> (u64, u64, u64) {
    let k = class as usize;
    let inter = c[k][k];
    let gt: u64 = c[k].iter().sum();
    let pred: u64 = c.iter().map(|row| row[k]).sum();
    (inter, gt, pred)
}

/// `None` when the class is absent from the ground truth.
pub fn dice_from_confusion(c: &Confusion, class: u8) -> Option<f64> {
    let (inter, a, b) = overlap(c, class);
    (a > 0).then(|| 2.0 * inter as f64 / (a + b) as f64)
}

/// `None` when the class is absent from the ground truth.
pub fn iou_from_confusion(c: &Confusion, class: u8) -> Option<f64> {
    let (inter, a, b) = overlap(c, class);
    (a > 0).then(|| inter as f64 / (a + b - inter) as f64)
}

pub fn dice(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<Option<f64>> {
    Ok(dice_from_confusion(&confusion_counts(pred, gt)?, class))
}

pub fn iou(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<Option<f64>> {
    Ok(iou_from_confusion(&confusion_counts(pred, gt)?, class))
}

/// Scores of one foreground class on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub image_id: String,
    pub class_id: u8,
    pub dsc: Option<f64>,
    pub iou: Option<f64>,
    pub present_in_gt: bool,
}

/// One record per foreground class.
pub fn image_records(image_id: &str, pred: &LabelMap, gt: &LabelMap) -> Result<Vec<MetricRecord>> {
    let c = confusion_counts(pred, gt)?;
    Ok(FOREGROUND
        .iter()
        .map(|&k| {
            let dsc = dice_from_confusion(&c, k);
            MetricRecord {
                image_id: image_id.to_owned(),
                class_id: k,
                dsc,
                iou: iou_from_confusion(&c, k),
                present_in_gt: dsc.is_some(),
            }
        })
        .collect())
}

/// Macro means `(iou, dsc)` over records present in the ground truth;
/// NaN when there are none.
pub fn mean_scores(records: &[MetricRecord]) -> (f64, f64) {
    let present: Vec<&MetricRecord> = records.iter().filter(|r| r.present_in_gt).collect();
    let n = present.len() as f64;
    let iou = present.iter().filter_map(|r| r.iou).sum::<f64>() / n;
    let dsc = present.iter().filter_map(|r| r.dsc).sum::<f64>() / n;
    (iou, dsc)
}

/// Anything that produces 5-class logits for a batch of samples.
pub trait Segmenter {
    fn logits(&self, batch: &[&Sample]) -> Result<Tensor<f32>>;
}

impl<F: Float> Segmenter for Model<F> {
    fn logits(&self, batch: &[&Sample]) -> Result<Tensor<f32>> {
        let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
        Ok(Model::logits(self, image_batch::<F>(&images)?)?.cast())
    }
}

/// Test hook: logits that reproduce the ground truth with high confidence.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthEcho;

impl Segmenter for GroundTruthEcho {
    fn logits(&self, batch: &[&Sample]) -> Result<Tensor<f32>> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (h, w) = (first.mask.height(), first.mask.width());
        let mut out = Tensor::zeros(Shape::new(batch.len(), NUM_CLASSES, h, w));
        for (n, s) in batch.iter().enumerate() {
            if (s.mask.height(), s.mask.width()) != (h, w) {
                return Err(Error::Shape(
                    "ground-truth echo needs equal mask sizes".into(),
                ));
            }
            let item = out.item_mut(n);
            for (q, &l) in s.mask.labels().iter().enumerate() {
                item[l as usize * h * w + q] = 50.0;
            }
        }
        Ok(out)
    }
}

/// Records and aggregate scores of one model on one sample set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub records: Vec<MetricRecord>,
    pub mean_iou: f64,
    pub mean_dsc: f64,
    /// Cross-entropy averaged over images.
    pub mean_loss: f64,
}

/// Scores `samples` in batches of `batch_size`.
pub fn evaluate<S: Segmenter + ?Sized>(
    model: &S,
    samples: &[&Sample],
    batch_size: usize,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Dataset(
            "cannot evaluate on an empty sample set".into(),
        ));
    }
    let mut records = Vec::with_capacity(samples.len() * FOREGROUND.len());
    let mut loss_sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let logits = model.logits(chunk)?;
        let preds = argmax_labels(&logits);
        for (n, (s, pred)) in chunk.iter().zip(&preds).enumerate() {
            let item = Tensor::from_vec(
                Shape::new(1, logits.shape().c, logits.shape().h, logits.shape().w),
                logits.item(n).to_vec(),
            )?;
            let (loss, _) = softmax_cross_entropy(&item, s.mask.labels());
            loss_sum += loss;
            records.extend(image_records(&s.id, pred, &s.mask)?);
        }
    }
    let (mean_iou, mean_dsc) = mean_scores(&records);
    Ok(Evaluation {
        records,
        mean_iou,
        mean_dsc,
        mean_loss: loss_sum / samples.len() as f64,
    })
}

/// Five-number summary of the IoU of one zone over the images containing it.
#[derive(Clone, Debug, PartialEq)]
pub struct ZoneSummary {
    pub class_id: u8,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme values within 1.5 IQR of the quartiles.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    /// Every value, ascending.
    pub values: Vec<f64>,
}

/// Linear-interpolation quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// IoU summary per zone; `None` for zones absent from every image.
pub fn zone_summary(records: &[MetricRecord], class_id: u8) -> Option<ZoneSummary> {
    let mut values: Vec<f64> = records
        .iter()
        .filter(|r| r.class_id == class_id && r.present_in_gt)
        .filter_map(|r| r.iou)
        .collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let q1 = quantile(&values, 0.25);
    let q3 = quantile(&values, 0.75);
    let fence = 1.5 * (q3 - q1);
    let inside = |v: &&f64| **v >= q1 - fence && **v <= q3 + fence;
    Some(ZoneSummary {
        class_id,
        count: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile(&values, 0.5),
        q1,
        q3,
        whisker_low: *values.iter().find(inside).unwrap_or(&q1),
        whisker_high: *values.iter().rev().find(inside).unwrap_or(&q3),
        outliers: values.iter().copied().filter(|v| !inside(&v)).collect(),
        values,
    })
}

/// Per-pixel softmax over the class axis.
pub fn softmax<F: Float>(logits: &Tensor<F>) -> Tensor<f64> {
    let s = logits.shape();
    let p = s.plane();
    let mut out = logits.cast::<f64>();
    for n in 0..s.n {
        let item = out.item_mut(n);
        for q in 0..p {
            let m = (0..s.c)
                .map(|c| item[c * p + q])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..s.c {
                let e = (item[c * p + q] - m).exp();
                item[c * p + q] = e;
                z += e;
            }
            for c in 0..s.c {
                item[c * p + q] /= z;
            }
        }
    }
    out
}

/// Shannon entropy (natural log) of each pixel's class distribution,
/// shaped `(n, 1, h, w)`.
pub fn uncertainty_map(probs: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = probs.shape();
    let p = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    for n in 0..s.n {
        let item = probs.item(n);
        let dst = out.item_mut(n);
        for (q, d) in dst.iter_mut().enumerate() {
            let mut total = 0.0;
            let mut h = 0.0;
            for c in 0..s.c {
                let v = item[c * p + q];
                if !(0.0..=1.0 + 1e-5).contains(&v) {
                    return Err(Error::Numeric(format!(
                        "probability {v} outside [0, 1] at pixel {q} of item {n}"
                    )));
                }
                total += v;
                if v > 0.0 {
                    h -= v * v.ln();
                }
            }
            if (total - 1.0).abs() > 1e-5 {
                return Err(Error::Numeric(format!(
                    "probabilities at pixel {q} of item {n} sum to {total}, not 1"
                )));
            }
            *d = h.max(0.0);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    image_id: String,
    class: u8,
    dsc: Option<f64>,
    iou: Option<f64>,
    present: u8,
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::data(path, e.to_string())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `image_id,class,dsc,iou,present`; absent scores are empty cells.
pub fn write_records_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    write_csv(
        path,
        records.iter().map(|r| RecordRow {
            image_id: r.image_id.clone(),
            class: r.class_id,
            dsc: r.dsc,
            iou: r.iou,
            present: r.present_in_gt as u8,
        }),
    )
}

pub fn read_records_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<RecordRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let present = row.present != 0;
        if !FOREGROUND.contains(&row.class)
            || present != row.dsc.is_some()
            || present != row.iou.is_some()
        {
            return Err(Error::data(
                path,
                format!(
                    "inconsistent record for {} class {}",
                    row.image_id, row.class
                ),
            ));
        }
        out.push(MetricRecord {
            image_id: row.image_id,
            class_id: row.class,
            dsc: row.dsc,
            iou: row.iou,
            present_in_gt: present,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SummaryRow {
    scope: String,
    count: usize,
    iou: f64,
    dsc: f64,
    loss: Option<f64>,
}

/// Per-zone means plus an `all` row carrying the mean loss.
pub fn write_summary_csv(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut rows = Vec::new();
    for &k in &FOREGROUND {
        let rs: Vec<MetricRecord> = eval
            .records
            .iter()
            .filter(|r| r.class_id == k && r.present_in_gt)
            .cloned()
            .collect();
        let (iou, dsc) = mean_scores(&rs);
        rows.push(SummaryRow {
            scope: CLASS_NAMES[k as usize].to_owned(),
            count: rs.len(),
            iou,
            dsc,
            loss: None,
        });
    }
    rows.push(SummaryRow {
        scope: "all".into(),
        count: eval.records.iter().filter(|r| r.present_in_gt).count(),
        iou: eval.mean_iou,
        dsc: eval.mean_dsc,
        loss: Some(eval.mean_loss),
    });
    write_csv(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, labels: &[u8]) -> LabelMap {
        LabelMap::new(w, labels.len() / w, labels.to_vec()).unwrap()
    }

    #[test]
    fn background_vs_all_cz() {
        let pred = LabelMap::filled(4, 4, 0).unwrap();
        let gt = LabelMap::filled(4, 4, 1).unwrap();
        let c = confusion_counts(&pred, &gt).unwrap();
        assert_eq!(c[1][0], 16);
        assert_eq!(c.iter().flatten().sum::<u64>(), 16);
        assert_eq!(dice(&pred, &gt, 1).unwrap(), Some(0.0));
        assert_eq!(dice(&pred, &gt, 2).unwrap(), None);
    }

    #[test]
    fn hand_counted_overlap() {
        // |A| = 4, |B| = 4, |A∩B| = 2
        #[rustfmt::skip]
        let gt = map(4, &[
            1, 1, 0, 0,
            1, 1, 0, 0,
            0, 0, 0, 0,
            0, 0, 0, 0,
        ]);
        #[rustfmt::skip]
        let pred = map(4, &[
            0, 1, 1, 0,
            0, 1, 1, 0,
            0, 0, 0, 0,
            0, 0, 0, 0,
        ]);
        assert_eq!(dice(&pred, &gt, 1).unwrap(), Some(0.5));
        assert_eq!(iou(&pred, &gt, 1).unwrap(), Some(1.0 / 3.0));
    }

    #[test]
    fn identical_maps_give_a_diagonal() {
        let m = map(3, &[0, 1, 1, 2, 2, 2, 4, 4, 0]);
        let c = confusion_counts(&m, &m).unwrap();
        for (i, row) in c.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expected = if i == j {
                    m.labels().iter().filter(|&&l| l == i as u8).count()
                } else {
                    0
                };
                assert_eq!(v, expected as u64);
            }
        }
        assert_eq!(dice(&m, &m, 2).unwrap(), Some(1.0));
        assert_eq!(iou(&m, &m, 4).unwrap(), Some(1.0));
    }

    #[test]
    fn two_image_means_match_hand_computation() {
        // image a: CZ dice 2*1/(2+1), iou 1/2; PZ dice 1, iou 1
        // image b: CZ dice 1, iou 1; TUM dice 0, iou 0; PZ absent
        let (gt_a, pred_a) = (map(2, &[1, 1, 2, 0]), map(2, &[1, 0, 2, 0]));
        let (gt_b, pred_b) = (map(2, &[1, 4, 0, 0]), map(2, &[1, 0, 0, 0]));
        let mut records = image_records("a", &pred_a, &gt_a).unwrap();
        records.extend(image_records("b", &pred_b, &gt_b).unwrap());
        let (mean_iou, mean_dsc) = mean_scores(&records);
        assert!((mean_iou - (0.5 + 1.0 + 1.0 + 0.0) / 4.0).abs() < 1e-15);
        assert!((mean_dsc - (2.0 / 3.0 + 1.0 + 1.0 + 0.0) / 4.0).abs() < 1e-15);
        assert_eq!(records.iter().filter(|r| r.present_in_gt).count(), 4);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = LabelMap::filled(4, 4, 0).unwrap();
        let b = LabelMap::filled(4, 2, 0).unwrap();
        assert!(confusion_counts(&a, &b).is_err());
    }

    #[test]
    fn entropy_fixtures() {
        let probs = Tensor::from_vec(
            (3, 5, 1, 1),
            vec![
                1.0, 0.0, 0.0, 0.0, 0.0, //
                0.2, 0.2, 0.2, 0.2, 0.2, //
                0.5, 0.5, 0.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let h = uncertainty_map(&probs).unwrap();
        assert_eq!(h.data()[0], 0.0);
        assert!((h.data()[1] - 5f64.ln()).abs() < 1e-12);
        assert!((h.data()[2] - 2f64.ln()).abs() < 1e-12);
        let bad = Tensor::from_vec((1, 5, 1, 1), vec![0.5, 0.4, 0.0, 0.0, 0.0]).unwrap();
        assert!(uncertainty_map(&bad).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
