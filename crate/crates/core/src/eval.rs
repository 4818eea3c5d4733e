//! Classification metrics, mask/box IoU, average precision and fold
//! aggregation, plus the JSON/text report shapes built from them.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{BinaryMask, ImagingError, PixelBox};
use crate::inference::InstancePrediction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
        })
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} is undefined: zero denominator")]
    UndefinedMetric(Metric),
    #[error(transparent)]
    DimensionMismatch(#[from] ImagingError),
    #[error("nothing to evaluate: no ground-truth instances")]
    EmptyEvaluation,
    #[error("need at least 2 folds to aggregate, got {0}")]
    InsufficientFolds(usize),
}

/// Binary confusion counts with `cluster` as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
}

impl ConfusionCounts {
    /// Counts `(truth, predicted)` pairs of positive-class flags.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for pair in pairs {
            c.record(pair.0, pair.1);
        }
        c
    }

    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.true_pos += 1,
            (false, true) => self.false_pos += 1,
            (false, false) => self.true_neg += 1,
            (true, false) => self.false_neg += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

fn ratio(num: u64, den: u64, metric: Metric) -> Result<f64, EvalError> {
    if den == 0 {
        Err(EvalError::UndefinedMetric(metric))
    } else {
        Ok(num as f64 / den as f64)
    }
}

/// Accuracy, precision, recall and F1. A zero denominator is an error,
/// never a silent zero.
pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassificationMetrics, EvalError> {
    let accuracy = ratio(c.true_pos + c.true_neg, c.total(), Metric::Accuracy)?;
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos, Metric::Precision)?;
    let recall = ratio(c.true_pos, c.true_pos + c.false_neg, Metric::Recall)?;
    if precision + recall == 0.0 {
        return Err(EvalError::UndefinedMetric(Metric::F1));
    }
    let f1 = 2.0 * precision * recall / (precision + recall);
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Mask IoU; two empty masks count as a perfect match.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, EvalError> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn box_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    a.iou(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Mask,
    Box,
}

/// Predictions and ground truth for one image.
#[derive(Clone, Debug, Default)]
pub struct ImageEval {
    pub predictions: Vec<InstancePrediction>,
    pub ground_truth: Vec<BinaryMask>,
}

/// `(image, prediction)` and `(image, ground truth)` indices of one match.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub image: usize,
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub iou_threshold: f64,
    pub ap: f64,
    /// True-positive matches at this threshold.
    pub matched: Vec<MatchedPair>,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95, each computed as an exact
/// ratio so `0.6` compares equal to an IoU of `60 / 100`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Greedy assignment shared by every threshold.
///
/// Predictions are ranked by descending confidence (ties keep input order,
/// image by image). Within its image each prediction takes the unmatched
/// ground truth with the highest IoU (ties to the lower index); a threshold
/// then only decides whether that match counts as a true positive. Because
/// the assignment does not depend on the threshold, raising the threshold
/// can only remove true positives.
#[derive(Clone, Debug)]
pub struct Matching {
    /// `(image, prediction, confidence, best match)` in rank order.
    ranked: Vec<(usize, usize, f64, Option<(usize, f64)>)>,
    num_gt: usize,
}

impl Matching {
    pub fn new(images: &[ImageEval], kind: IouKind) -> Result<Self, EvalError> {
        let per_image: Vec<Vec<Option<(usize, f64)>>> = images
            .par_iter()
            .map(|img| match_image(img, kind))
            .collect::<Result<_, _>>()?;
        let mut ranked: Vec<_> = images
            .iter()
            .enumerate()
            .flat_map(|(i, img)| {
                let matches = &per_image[i];
                img.predictions
                    .iter()
                    .enumerate()
                    .map(move |(p, pred)| (i, p, pred.confidence, matches[p]))
            })
            .collect();
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2));
        let num_gt = images.iter().map(|i| i.ground_truth.len()).sum();
        Ok(Self { ranked, num_gt })
    }

    pub fn num_ground_truth(&self) -> usize {
        self.num_gt
    }

    pub fn average_precision(&self, threshold: f64) -> Result<ApResult, EvalError> {
        if self.num_gt == 0 {
            return Err(EvalError::EmptyEvaluation);
        }
        let mut tp = 0usize;
        let mut curve = Vec::with_capacity(self.ranked.len());
        let mut matched = Vec::new();
        for (rank, &(image, prediction, _, m)) in self.ranked.iter().enumerate() {
            if let Some((g, iou)) = m.filter(|&(_, iou)| iou >= threshold) {
                tp += 1;
                matched.push(MatchedPair {
                    image,
                    prediction,
                    ground_truth: g,
                    iou,
                });
            }
            curve.push((tp as f64 / self.num_gt as f64, tp as f64 / (rank + 1) as f64));
        }
        Ok(ApResult {
            iou_threshold: threshold,
            ap: interpolated_ap(&curve),
            matched,
        })
    }
}

fn match_image(img: &ImageEval, kind: IouKind) -> Result<Vec<Option<(usize, f64)>>, EvalError> {
    let gt_boxes: Vec<Option<PixelBox>> = img.ground_truth.iter().map(|g| g.bounding_box()).collect();
    let mut order: Vec<usize> = (0..img.predictions.len()).collect();
    order.sort_by(|&a, &b| {
        img.predictions[b]
            .confidence
            .total_cmp(&img.predictions[a].confidence)
    });
    let mut taken = vec![false; img.ground_truth.len()];
    let mut out = vec![None; img.predictions.len()];
    for p in order {
        let pred = &img.predictions[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in img.ground_truth.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = match kind {
                IouKind::Mask => mask_iou(&pred.mask, gt)?,
                IouKind::Box => gt_boxes[g].map_or(0.0, |b| box_iou(&pred.bbox, &b)),
            };
            if iou > 0.0 && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            assert!(!taken[g], "ground truth {g} matched twice");
            taken[g] = true;
        }
        out[p] = best;
    }
    Ok(out)
}

/// 101-point interpolated area under `(recall, precision)` points given in
/// rank order.
fn interpolated_ap(curve: &[(f64, f64)]) -> f64 {
    // Precision envelope: best precision at this rank or any later one.
    let mut envelope: Vec<(f64, f64)> = curve.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        while k < envelope.len() && envelope[k].0 < r {
            k += 1;
        }
        if k < envelope.len() {
            sum += envelope[k].1;
        }
    }
    sum / 101.0
}

/// AP on a single image.
pub fn average_precision(
    predictions: &[InstancePrediction],
    ground_truth: &[BinaryMask],
    iou_threshold: f64,
) -> Result<ApResult, EvalError> {
    let images = [ImageEval {
        predictions: predictions.to_vec(),
        ground_truth: ground_truth.to_vec(),
    }];
    Matching::new(&images, IouKind::Mask)?.average_precision(iou_threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub kind: IouKind,
    pub per_threshold: Vec<ApResult>,
    pub mean_ap: f64,
}

/// Mean AP over `thresholds` for a whole dataset.
pub fn map_range(images: &[ImageEval], thresholds: &[f64], kind: IouKind) -> Result<MapResult, EvalError> {
    let matching = Matching::new(images, kind)?;
    if matching.num_ground_truth() == 0 || thresholds.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let per_threshold = thresholds
        .iter()
        .map(|&t| matching.average_precision(t))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_ap = per_threshold.iter().map(|a| a.ap).sum::<f64>() / thresholds.len() as f64;
    Ok(MapResult {
        kind,
        per_threshold,
        mean_ap,
    })
}

/// Best IoU each ground-truth instance reaches against any prediction.
pub fn best_iou_per_ground_truth(images: &[ImageEval]) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::new();
    for img in images {
        for gt in &img.ground_truth {
            let mut best: f64 = 0.0;
            for p in &img.predictions {
                best = best.max(mask_iou(&p.mask, gt)?);
            }
            out.push(best);
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample (n - 1) standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.len() < 2 {
            return None;
        }
        let n = values.len() as f64;
        // Shifting by the first value keeps identical inputs at exactly
        // zero spread.
        let shift = values[0];
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub folds: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

pub fn aggregate_folds(per_fold: &[ClassificationMetrics]) -> Result<FoldAggregate, EvalError> {
    let stat = |m: Metric| {
        let v: Vec<f64> = per_fold.iter().map(|f| f.get(m)).collect();
        MeanStd::of(&v).ok_or(EvalError::InsufficientFolds(per_fold.len()))
    };
    Ok(FoldAggregate {
        folds: per_fold.len(),
        accuracy: stat(Metric::Accuracy)?,
        precision: stat(Metric::Precision)?,
        recall: stat(Metric::Recall)?,
        f1: stat(Metric::F1)?,
    })
}

/// Left-aligned first column, right-aligned others, two-space gutters.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let pad = widths[i] - c.chars().count();
            if i > 0 {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            } else {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Per-fold classification results plus their aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub k: usize,
    pub backend: String,
    pub folds: Vec<FoldResult>,
    pub aggregate: FoldAggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub metrics: ClassificationMetrics,
}

impl CrossvalReport {
    pub fn table(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut rows: Vec<Vec<String>> = self
            .folds
            .iter()
            .map(|f| {
                vec![
                    f.fold.to_string(),
                    f.counts.true_pos.to_string(),
                    f.counts.true_neg.to_string(),
                    f.counts.false_pos.to_string(),
                    f.counts.false_neg.to_string(),
                    pct(f.metrics.accuracy),
                    pct(f.metrics.precision),
                    pct(f.metrics.recall),
                    pct(f.metrics.f1),
                ]
            })
            .collect();
        let a = &self.aggregate;
        let mut mean = vec!["mean ± std".to_string()];
        mean.extend(std::iter::repeat_n(String::new(), 4));
        mean.extend([a.accuracy, a.precision, a.recall, a.f1].map(|m| m.to_string()));
        rows.push(mean);
        render_table(
            &["fold", "TP", "TN", "FP", "FN", "accuracy %", "precision %", "recall %", "F1 %"],
            &rows,
        )
    }
}

/// Instance-segmentation summary over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEvalReport {
    pub backend: String,
    pub images: usize,
    pub ground_truth: usize,
    pub predictions: usize,
    pub mask_map_50: f64,
    pub mask_map_75: f64,
    pub mask_map_50_95: f64,
    pub box_map_50_95: f64,
    pub median_best_iou: f64,
}

impl SegEvalReport {
    pub fn compute(backend: &str, images: &[ImageEval]) -> Result<Self, EvalError> {
        let mask = map_range(images, &coco_thresholds(), IouKind::Mask)?;
        let boxes = map_range(images, &coco_thresholds(), IouKind::Box)?;
        let at = |t: f64| {
            mask.per_threshold
                .iter()
                .find(|a| a.iou_threshold == t)
                .map(|a| a.ap)
                .unwrap_or(0.0)
        };
        let best = best_iou_per_ground_truth(images)?;
        Ok(Self {
            backend: backend.to_string(),
            images: images.len(),
            ground_truth: best.len(),
            predictions: images.iter().map(|i| i.predictions.len()).sum(),
            mask_map_50: at(0.5),
            mask_map_75: at(0.75),
            mask_map_50_95: mask.mean_ap,
            box_map_50_95: boxes.mean_ap,
            median_best_iou: median(&best).unwrap_or(0.0),
        })
    }

    pub fn table(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        render_table(
            &["backend", "mask mAP@0.5", "mask mAP@0.75", "mask mAP@0.5:0.95", "box mAP@0.5:0.95"],
            &[vec![
                self.backend.clone(),
                pct(self.mask_map_50),
                pct(self.mask_map_75),
                pct(self.mask_map_50_95),
                pct(self.box_map_50_95),
            ]],
        )
    }
}
