//! Anchor grid, anchor-to-truth assignment, box coding and suppression.

use crate::eval::iou_unchecked;
use crate::pixels::BoundingBox;

/// Anchors with IoU at or above this are positives.
pub const POSITIVE_IOU: f64 = 0.5;
/// Anchors whose best IoU is below this are negatives; between is ignored.
pub const NEGATIVE_IOU: f64 = 0.3;

const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn as_box(&self) -> BoundingBox {
        BoundingBox {
            x_min: self.cx - 0.5 * self.w,
            y_min: self.cy - 0.5 * self.h,
            x_max: self.cx + 0.5 * self.w,
            y_max: self.cy + 0.5 * self.h,
            score: None,
        }
    }
}

/// Anchors ordered `(cell, size)` with cells row-major over the feature map.
pub fn anchor_grid(feat_h: usize, feat_w: usize, stride: usize, sizes: &[(f64, f64)]) -> Vec<Anchor> {
    let s = stride as f64;
    let mut out = Vec::with_capacity(feat_h * feat_w * sizes.len());
    for y in 0..feat_h {
        for x in 0..feat_w {
            for &(w, h) in sizes {
                out.push(Anchor {
                    cx: (x as f64 + 0.5) * s,
                    cy: (y as f64 + 0.5) * s,
                    w,
                    h,
                });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Negative,
    Ignore,
    /// Matched truth index.
    Positive(usize),
}

/// Two-threshold assignment. Each truth additionally claims its best anchor so
/// that small or oddly shaped targets always get a positive.
pub fn assign(anchors: &[Anchor], truths: &[BoundingBox]) -> Vec<AnchorLabel> {
    let boxes: Vec<BoundingBox> = anchors.iter().map(Anchor::as_box).collect();
    let mut best = vec![(0.0f64, usize::MAX); anchors.len()];
    let mut per_truth = vec![(0.0f64, usize::MAX); truths.len()];
    for (ai, ab) in boxes.iter().enumerate() {
        for (ti, tb) in truths.iter().enumerate() {
            let v = iou_unchecked(ab, tb);
            if v > best[ai].0 {
                best[ai] = (v, ti);
            }
            if v > per_truth[ti].0 {
                per_truth[ti] = (v, ai);
            }
        }
    }
    let mut labels: Vec<AnchorLabel> = best
        .iter()
        .map(|&(v, ti)| {
            if v >= POSITIVE_IOU {
                AnchorLabel::Positive(ti)
            } else if v < NEGATIVE_IOU {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    for (ti, &(v, ai)) in per_truth.iter().enumerate() {
        if v > 0.0 && !matches!(labels[ai], AnchorLabel::Positive(_)) {
            labels[ai] = AnchorLabel::Positive(ti);
        }
    }
    labels
}

/// Regression targets `(dx, dy, dw, dh)` of `truth` relative to `anchor`.
pub fn encode(anchor: &Anchor, truth: &BoundingBox) -> [f64; 4] {
    let (cx, cy) = truth.center();
    [
        (cx - anchor.cx) / anchor.w,
        (cy - anchor.cy) / anchor.h,
        (truth.width() / anchor.w).ln(),
        (truth.height() / anchor.h).ln(),
    ]
}

pub fn decode(anchor: &Anchor, delta: [f64; 4]) -> BoundingBox {
    let cx = anchor.cx + delta[0] * anchor.w;
    let cy = anchor.cy + delta[1] * anchor.h;
    let w = anchor.w * delta[2].min(MAX_LOG_SCALE).exp();
    let h = anchor.h * delta[3].min(MAX_LOG_SCALE).exp();
    BoundingBox {
        x_min: cx - 0.5 * w,
        y_min: cy - 0.5 * h,
        x_max: cx + 0.5 * w,
        y_max: cy + 0.5 * h,
        score: None,
    }
}

/// Greedy suppression over boxes already sorted by descending score. A box is
/// dropped when its IoU with a kept box reaches `iou_threshold`.
pub fn nms_sorted(boxes: &[BoundingBox], iou_threshold: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        if keep.iter().all(|&k| iou_unchecked(&boxes[k], b) < iou_threshold) {
            keep.push(i);
        }
    }
    keep
}
