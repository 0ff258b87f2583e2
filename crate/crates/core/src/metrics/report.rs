use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ConfusionCounts, DetectionScores, PixelScores};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub id: String,
    pub pixel: PixelScores,
    pub detection: DetectionScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Unweighted mean of per-image rates.
    Macro,
    /// Rates of the summed counts.
    Micro,
}

/// One row of the summary: segmentation and detection rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub seg_precision: Option<f64>,
    pub seg_recall: Option<f64>,
    pub seg_iu: Option<f64>,
    pub det_precision: Option<f64>,
    pub det_recall: Option<f64>,
}

impl RateSet {
    fn values(&self) -> [Option<f64>; 5] {
        [
            self.seg_precision,
            self.seg_recall,
            self.seg_iu,
            self.det_precision,
            self.det_recall,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub macro_rates: RateSet,
    /// Images skipped per macro rate because the rate was undefined, in
    /// `RateSet` field order.
    pub macro_skipped: [usize; 5],
    pub micro_rates: RateSet,
    pub pixel_counts: ConfusionCounts,
    pub detection_counts: ConfusionCounts,
    pub per_image: Vec<ImageResult>,
}

impl MetricsReport {
    pub fn rates(&self, mode: AggregateMode) -> &RateSet {
        match mode {
            AggregateMode::Macro => &self.macro_rates,
            AggregateMode::Micro => &self.micro_rates,
        }
    }
}

/// Summed-count rate; 0/0 counts as 1 only when the counts hold no errors at all.
fn micro(rate: Option<f64>, counts: &ConfusionCounts) -> Option<f64> {
    match rate {
        Some(r) => Some(r),
        None if counts.fp == 0 && counts.fn_ == 0 => Some(1.0),
        None => None,
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

pub fn aggregate_report(results: &[ImageResult]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::Validation("no images to aggregate".into()));
    }
    let pick: [fn(&ImageResult) -> Option<f64>; 5] = [
        |r| r.pixel.precision,
        |r| r.pixel.recall,
        |r| r.pixel.iu,
        |r| r.detection.precision,
        |r| r.detection.recall,
    ];
    let mut means = [None; 5];
    let mut macro_skipped = [0; 5];
    for (k, f) in pick.iter().enumerate() {
        (means[k], macro_skipped[k]) = mean_defined(results.iter().map(f));
    }
    let pixel_counts = results
        .iter()
        .fold(ConfusionCounts::default(), |acc, r| acc + r.pixel.counts);
    let detection_counts = results
        .iter()
        .fold(ConfusionCounts::default(), |acc, r| acc + r.detection.counts);
    Ok(MetricsReport {
        images: results.len(),
        macro_rates: RateSet {
            seg_precision: means[0],
            seg_recall: means[1],
            seg_iu: means[2],
            det_precision: means[3],
            det_recall: means[4],
        },
        macro_skipped,
        micro_rates: RateSet {
            seg_precision: micro(pixel_counts.precision(), &pixel_counts),
            seg_recall: micro(pixel_counts.recall(), &pixel_counts),
            seg_iu: micro(pixel_counts.iu(), &pixel_counts),
            det_precision: micro(detection_counts.precision(), &detection_counts),
            det_recall: micro(detection_counts.recall(), &detection_counts),
        },
        pixel_counts,
        detection_counts,
        per_image: results.to_vec(),
    })
}

fn csv_rate(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// One line per image; undefined rates are left empty.
pub fn per_image_csv(results: &[ImageResult]) -> String {
    let mut out = String::from("id,tp,fp,fn,precision,recall,iu,det_tp,det_fp,det_fn,det_precision,det_recall\n");
    for r in results {
        let (p, d) = (&r.pixel, &r.detection);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            p.counts.tp,
            p.counts.fp,
            p.counts.fn_,
            csv_rate(p.precision),
            csv_rate(p.recall),
            csv_rate(p.iu),
            d.counts.tp,
            d.counts.fp,
            d.counts.fn_,
            csv_rate(d.precision),
            csv_rate(d.recall),
        );
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "n/a".into())
}

/// Plain-text summary: rates in percent, segmentation then detection.
pub fn summary_table(label: &str, report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {label}: {} images", report.images);
    let _ = writeln!(out, "# macro: mean of per-image rates, images with an undefined rate skipped");
    let _ = writeln!(out, "# micro: rates of summed counts; 0/0 with no FP and no FN reported as 100");
    let _ = writeln!(out, "{:<8}{:>27}{:>18}", "", "Segmentation", "Detection");
    let _ = writeln!(
        out,
        "{:<8}{:>9}{:>9}{:>9}{:>9}{:>9}",
        "", "Prec", "Rec", "IU", "Prec", "Rec"
    );
    for (name, rates) in [("macro", &report.macro_rates), ("micro", &report.micro_rates)] {
        let _ = write!(out, "{name:<8}");
        for v in rates.values() {
            let _ = write!(out, "{:>9}", pct(v));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<8}", "skipped");
    for s in report.macro_skipped {
        let _ = write!(out, "{s:>9}");
    }
    out.push('\n');
    let (p, d) = (&report.pixel_counts, &report.detection_counts);
    let _ = writeln!(out, "pixels  TP {} FP {} FN {}", p.tp, p.fp, p.fn_);
    let _ = writeln!(out, "blobs   TP {} FP {} FN {}", d.tp, d.fp, d.fn_);
    out
}
