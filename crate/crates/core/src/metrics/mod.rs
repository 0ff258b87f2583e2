//! Pixel-level segmentation metrics and blob-level detection metrics.
//!
//! Segmentation: `Prec = TP/(TP+FP)`, `Rec = TP/(TP+FN)`, `IU = TP/(TP+FP+FN)`
//! over pixels. Detection uses the same formulas over blobs: a predicted blob
//! that falls within a polyp mask credits that polyp (at most one TP per
//! polyp), a blob within no polyp is a FP, and an undetected polyp is a FN.

mod blobs;
mod report;

pub use blobs::{connected_components, Blob};
pub use report::{aggregate_report, per_image_csv, summary_table, AggregateMode, ImageResult, MetricsReport, RateSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn iu(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn is_zero(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Pixel rates; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelScores {
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Pixel is polyp iff its class-1 score strictly exceeds its class-0 score.
pub fn argmax_segmentation(scores: &Tensor) -> Result<Mask> {
    let s = scores.shape();
    if s.c != 2 {
        return Err(Error::dim("channels", 2, s.c));
    }
    if s.n != 1 {
        return Err(Error::dim("batch", 1, s.n));
    }
    let (bg, fg) = (scores.plane(0, 0), scores.plane(0, 1));
    Mask::from_bytes(
        s.h,
        s.w,
        &bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)).collect::<Vec<_>>(),
    )
}

pub fn pixel_metrics(pred: &Mask, gt: &Mask) -> Result<PixelScores> {
    pred.same_dims(gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.as_bytes().iter().zip(gt.as_bytes()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(PixelScores {
        counts: c,
        precision: c.precision(),
        recall: c.recall(),
        iu: c.iu(),
    })
}

/// How a predicted blob is matched to a ground-truth polyp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DetectionRule {
    /// The blob centroid, rounded to the nearest pixel, lies inside the polyp.
    #[default]
    Centroid,
    /// At least `min_fraction` of the blob's pixels lie inside the polyp
    /// (the polyp with the largest overlap wins).
    Overlap { min_fraction: f64 },
}

/// Index of the polyp `blob` falls within, if any.
pub fn match_blob(blob: &Blob, polyps: &[Mask], rule: DetectionRule) -> Option<usize> {
    match rule {
        DetectionRule::Centroid => {
            let (r, c) = blob.centroid_pixel();
            polyps.iter().position(|m| r < m.rows && c < m.cols && m.get(r, c))
        }
        DetectionRule::Overlap { min_fraction } => {
            let mut best: Option<(usize, usize)> = None;
            for (k, m) in polyps.iter().enumerate() {
                let inside = blob.pixels.iter().filter(|&&(r, c)| m.get(r, c)).count();
                if inside > 0 && best.is_none_or(|(_, b)| inside > b) {
                    best = Some((k, inside));
                }
            }
            best.filter(|&(_, n)| n as f64 >= min_fraction * blob.pixels.len() as f64)
                .map(|(k, _)| k)
        }
    }
}

/// Blob-level detection counts of `pred` against disjoint per-polyp masks.
pub fn detection_metrics(pred: &Mask, polyps: &[Mask], rule: DetectionRule) -> Result<DetectionScores> {
    for (k, m) in polyps.iter().enumerate() {
        pred.same_dims(m)?;
        for other in &polyps[k + 1..] {
            if m.intersects(other)? {
                return Err(Error::Validation("ground-truth polyp masks overlap".into()));
            }
        }
    }
    let mut detected = vec![false; polyps.len()];
    let mut fp = 0;
    for blob in connected_components(pred) {
        match match_blob(&blob, polyps, rule) {
            Some(k) => detected[k] = true,
            None => fp += 1,
        }
    }
    let tp = detected.iter().filter(|&&d| d).count() as u64;
    let counts = ConfusionCounts {
        tp,
        fp,
        fn_: polyps.len() as u64 - tp,
    };
    Ok(DetectionScores {
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
    })
}
