//! Pixel-wise softmax cross-entropy.

use super::Tensor;
use crate::error::{Error, Result};

/// Label value excluded from the loss (void / border pixels).
pub const IGNORE: u8 = 255;

/// Per-pixel class ids, shape (N, H, W).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::dim("label count", n * h * w, data.len()));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, label: u8) -> Self {
        LabelMap {
            n,
            h,
            w,
            data: vec![label; n * h * w],
        }
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> u8 {
        self.data[(n * self.h + i) * self.w + j]
    }
}

/// How per-pixel losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    /// Mean over non-ignored pixels.
    #[default]
    Mean,
    /// Plain sum over pixels.
    Sum,
}

/// Returns the loss and its gradient with respect to `scores` (N, C, H, W).
pub fn softmax_xent(scores: &Tensor, labels: &LabelMap, norm: LossNorm) -> Result<(f64, Tensor)> {
    let s = scores.shape();
    if labels.n != s.n {
        return Err(Error::dim("batch", s.n, labels.n));
    }
    if labels.h != s.h {
        return Err(Error::dim("rows", s.h, labels.h));
    }
    if labels.w != s.w {
        return Err(Error::dim("cols", s.w, labels.w));
    }
    if let Some(bad) = labels.data.iter().find(|&&l| l != IGNORE && l as usize >= s.c) {
        return Err(Error::Validation(format!(
            "label {bad} is neither a class id below {} nor IGNORE",
            s.c
        )));
    }
    let valid = labels.data.iter().filter(|&&l| l != IGNORE).count();
    let mut grad = Tensor::zeros(s);
    if valid == 0 {
        return Ok((0.0, grad));
    }
    let scale = match norm {
        LossNorm::Mean => 1.0 / valid as f64,
        LossNorm::Sum => 1.0,
    };
    let mut total = 0.0;
    let mut probs = vec![0.0; s.c];
    for n in 0..s.n {
        for i in 0..s.h {
            for j in 0..s.w {
                let label = labels.get(n, i, j);
                if label == IGNORE {
                    continue;
                }
                let mut top = 0;
                for c in 1..s.c {
                    if scores.get(n, c, i, j) > scores.get(n, top, i, j) {
                        top = c;
                    }
                }
                let m = scores.get(n, top, i, j);
                let mut rest = 0.0;
                for (c, p) in probs.iter_mut().enumerate() {
                    *p = (scores.get(n, c, i, j) - m).exp();
                    if c != top {
                        rest += *p;
                    }
                }
                // log-sum-exp relative to the max, accurate when the max dominates
                let lse = rest.ln_1p();
                total += (m - scores.get(n, label as usize, i, j)) + lse;
                let z = 1.0 + rest;
                for (c, &p) in probs.iter().enumerate() {
                    let onehot = if c == label as usize { 1.0 } else { 0.0 };
                    grad.set(n, c, i, j, (p / z - onehot) * scale);
                }
            }
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_scores_cost_ln2() {
        let scores = Tensor::filled(Shape::new(1, 2, 3, 3), 0.7);
        let labels = LabelMap::new(1, 3, 3, (0..9).map(|i| (i % 2) as u8).collect()).unwrap();
        let (loss, _) = softmax_xent(&scores, &labels, LossNorm::Mean).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_scores_have_negligible_loss() {
        let scores = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, _, _| if c == 1 { 50.0 } else { 0.0 });
        let labels = LabelMap::filled(1, 2, 2, 1);
        let (loss, _) = softmax_xent(&scores, &labels, LossNorm::Mean).unwrap();
        assert!(loss < 1e-20 && loss >= 0.0, "{loss}");
    }

    #[test]
    fn ignored_pixels_contribute_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, _, _, _| rng.gen_range(-2.0..2.0));
        let labels = LabelMap::new(1, 2, 2, vec![0, IGNORE, 1, IGNORE]).unwrap();
        let (_, grad) = softmax_xent(&scores, &labels, LossNorm::Mean).unwrap();
        for c in 0..2 {
            assert_eq!(grad.get(0, c, 0, 1), 0.0);
            assert_eq!(grad.get(0, c, 1, 1), 0.0);
        }
        let all_ignored = LabelMap::filled(1, 2, 2, IGNORE);
        let (loss, grad) = softmax_xent(&scores, &all_ignored, LossNorm::Mean).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unknown_label_is_rejected() {
        let scores = Tensor::zeros(Shape::new(1, 2, 1, 2));
        let labels = LabelMap::new(1, 1, 2, vec![0, 2]).unwrap();
        assert!(matches!(softmax_xent(&scores, &labels, LossNorm::Mean), Err(Error::Validation(_))));
    }

    #[test]
    fn sum_norm_scales_by_pixel_count() {
        let scores = Tensor::filled(Shape::new(1, 2, 2, 2), 0.0);
        let labels = LabelMap::filled(1, 2, 2, 0);
        let (mean, _) = softmax_xent(&scores, &labels, LossNorm::Mean).unwrap();
        let (sum, _) = softmax_xent(&scores, &labels, LossNorm::Sum).unwrap();
        assert!((sum - 4.0 * mean).abs() < 1e-14);
    }
}
