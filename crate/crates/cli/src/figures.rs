//! PNG figures: loss curves and image | heat map | mask panels.

use std::path::Path;

use image::{Rgb, RgbImage};
use polypseg_core::dataset::Sample;
use polypseg_core::raster::Mask;
use polypseg_core::tensor::Tensor;

use crate::error::CliResult;

const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Raw loss in light blue, 50-iteration running mean in dark blue, on a
/// log10 vertical axis with gridlines at each decade.
pub fn loss_curve(losses: &[f64], path: &Path) -> CliResult<()> {
    let (w, h, m) = (800i64, 400i64, 30i64);
    let mut img = RgbImage::from_pixel(w as u32, h as u32, Rgb([255, 255, 255]));
    let logs: Vec<f64> = losses.iter().map(|l| l.max(1e-12).log10()).collect();
    let finite = logs.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min).floor();
    let hi = finite.fold(f64::NEG_INFINITY, f64::max).ceil();
    if lo.is_finite() && hi.is_finite() {
        let span = (hi - lo).max(1.0);
        let ypix = |v: f64| h - m - ((v - lo) / span * (h - 2 * m) as f64).round() as i64;
        let mut d = lo;
        while d <= lo + span {
            line(&mut img, (m, ypix(d)), (w - m, ypix(d)), GRID);
            d += 1.0;
        }
        let n = logs.len().max(2) - 1;
        let xpix = |i: usize| m + (i as f64 / n as f64 * (w - 2 * m) as f64).round() as i64;
        let smooth: Vec<f64> = (0..losses.len())
            .map(|i| {
                let win = &losses[i.saturating_sub(49)..=i];
                (win.iter().sum::<f64>() / win.len() as f64).max(1e-12).log10()
            })
            .collect();
        for (series, color) in [(&logs, Rgb([160, 190, 235])), (&smooth, Rgb([20, 50, 150]))] {
            for i in 1..series.len() {
                line(&mut img, (xpix(i - 1), ypix(series[i - 1])), (xpix(i), ypix(series[i])), color);
            }
        }
    }
    line(&mut img, (m, h - m), (w - m, h - m), AXIS);
    line(&mut img, (m, m), (m, h - m), AXIS);
    img.save(path)?;
    Ok(())
}

/// Blue-to-red ramp for a probability in `[0, 1]`.
fn heat(p: f64) -> Rgb<u8> {
    let p = p.clamp(0.0, 1.0);
    let r = (255.0 * p.min(0.5) * 2.0) as u8;
    let b = (255.0 * (1.0 - p).min(0.5) * 2.0) as u8;
    let g = (255.0 * (1.0 - (2.0 * p - 1.0).abs())) as u8 / 2;
    Rgb([r, g, b])
}

/// Side by side: the frame, the polyp probability, and the prediction
/// against ground truth (white hit, red false positive, blue miss).
pub fn panel(sample: &Sample, scores: Option<&Tensor>, pred: &Mask, path: &Path) -> CliResult<()> {
    let (rows, cols) = (sample.rows() as u32, sample.cols() as u32);
    let gap = 4;
    let mut img = RgbImage::from_pixel(3 * cols + 2 * gap, rows, Rgb([255, 255, 255]));
    for i in 0..rows {
        for j in 0..cols {
            let (ii, jj) = (i as usize, j as usize);
            let px = |c| (sample.image.get(0, c, ii, jj).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(j, i, Rgb([px(0), px(1), px(2)]));
            let p = match scores {
                Some(s) => {
                    let (a, b) = (s.get(0, 0, ii, jj), s.get(0, 1, ii, jj));
                    1.0 / (1.0 + (a - b).exp())
                }
                None => f64::from(u8::from(pred.get(ii, jj))),
            };
            img.put_pixel(cols + gap + j, i, heat(p));
            let c = match (pred.get(ii, jj), sample.union.get(ii, jj)) {
                (true, true) => Rgb([255, 255, 255]),
                (true, false) => Rgb([220, 40, 40]),
                (false, true) => Rgb([40, 90, 220]),
                (false, false) => Rgb([0, 0, 0]),
            };
            img.put_pixel(2 * (cols + gap) + j, i, c);
        }
    }
    img.save(path)?;
    Ok(())
}
