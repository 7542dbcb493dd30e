//! IoU, greedy matching and all-points average precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::detector::{Detection, Detector};
use crate::error::{Error, Result};
use crate::pixels::{BoundingBox, Pixels};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// IoU without validation. Degenerate inputs yield 0.
pub fn iou_unchecked(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy one-to-one matching in score order: each detection takes the
/// highest-IoU unmatched truth at or above `iou_threshold`. Returns per-detection
/// true-positive flags.
pub fn match_detections(
    detections: &[Detection],
    truths: &[BoundingBox],
    iou_threshold: f64,
) -> Result<Vec<bool>> {
    if detections.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(Error::arg("detections must be sorted by descending score"));
    }
    for b in truths {
        b.validate()?;
    }
    let mut taken = vec![false; truths.len()];
    let mut flags = Vec::with_capacity(detections.len());
    for d in detections {
        d.bbox.validate()?;
        let mut best: Option<(usize, f64)> = None;
        for (ti, t) in truths.iter().enumerate() {
            if taken[ti] {
                continue;
            }
            let v = iou_unchecked(&d.bbox, t);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((ti, v));
            }
        }
        if let Some((ti, _)) = best {
            taken[ti] = true;
        }
        flags.push(best.is_some());
    }
    Ok(flags)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub curve: Vec<PrPoint>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub num_truths: usize,
    pub iou_threshold: f64,
}

/// A scored detection already judged TP or FP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredFlag {
    pub score: f64,
    pub true_positive: bool,
}

/// All-points AP: area under the precision envelope against recall, sweeping
/// the threshold through every detection. Equal scores keep input order.
pub fn average_precision(flags: &[ScoredFlag], total_truths: usize, iou_threshold: f64) -> Result<ApReport> {
    if total_truths == 0 {
        return Err(Error::arg("average precision needs at least one ground-truth box"));
    }
    if flags.iter().any(|f| !f.score.is_finite()) {
        return Err(Error::Numeric("non-finite detection score".into()));
    }
    let mut order: Vec<usize> = (0..flags.len()).collect();
    order.sort_by(|&a, &b| flags[b].score.total_cmp(&flags[a].score));

    let n = total_truths as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(flags.len());
    for &i in &order {
        if flags[i].true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push(PrPoint {
            threshold: flags[i].score,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / n,
        });
    }
    if tp > total_truths {
        return Err(Error::arg(format!(
            "{tp} true positives exceed {total_truths} ground-truth boxes"
        )));
    }

    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    for k in (0..curve.len()).rev() {
        envelope = envelope.max(curve[k].precision);
        let prev_recall = if k == 0 { 0.0 } else { curve[k - 1].recall };
        ap += (curve[k].recall - prev_recall) * envelope;
    }
    Ok(ApReport {
        ap,
        curve,
        true_positives: tp,
        false_positives: fp,
        false_negatives: total_truths - tp,
        num_truths: total_truths,
        iou_threshold,
    })
}

/// Evaluate an arbitrary prediction function over `len` items. `item(i)`
/// yields the input and its truths; predictions run in parallel, aggregation
/// is serial in item order.
pub fn evaluate_with<I, P>(len: usize, item: I, predict: P, iou_threshold: f64) -> Result<ApReport>
where
    I: Fn(usize) -> Result<(Pixels, Vec<BoundingBox>)> + Sync,
    P: Fn(usize, &Pixels) -> Result<Vec<Detection>> + Sync,
{
    if len == 0 {
        return Err(Error::arg("cannot evaluate an empty split"));
    }
    let per_item: Vec<(Vec<ScoredFlag>, usize)> = (0..len)
        .into_par_iter()
        .map(|i| {
            let (pixels, truths) = item(i)?;
            let dets = predict(i, &pixels)?;
            let flags = match_detections(&dets, &truths, iou_threshold)?;
            let scored = dets
                .iter()
                .zip(flags)
                .map(|(d, f)| ScoredFlag {
                    score: d.score,
                    true_positive: f,
                })
                .collect();
            Ok((scored, truths.len()))
        })
        .collect::<Result<_>>()?;
    let total: usize = per_item.iter().map(|(_, n)| n).sum();
    let flags: Vec<ScoredFlag> = per_item.into_iter().flat_map(|(f, _)| f).collect();
    average_precision(&flags, total, iou_threshold)
}

pub fn evaluate_detector<D: Detector + ?Sized>(detector: &D, split: &Split, iou_threshold: f64) -> Result<ApReport> {
    evaluate_with(
        split.len(),
        |i| split.load(i).map(|img| (img.pixels, img.boxes)),
        |_, px| detector.predict(px),
        iou_threshold,
    )
}

impl ApReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// PR curve as CSV with columns `threshold,precision,recall`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        out
    }

    pub fn save_curve_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.curve_csv()).map_err(|e| Error::io(path, e))
    }
}
