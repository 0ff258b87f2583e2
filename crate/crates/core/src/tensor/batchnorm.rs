//! Per-channel batch normalization.

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Learned affine parameters and running statistics of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    /// Weight of the old running value in the moving average.
    pub momentum: f64,
}

impl BatchNormState {
    /// gamma = 1, beta = 0, running statistics (0, 1).
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mode: BnMode,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn batchnorm(input: &Tensor, state: &mut BatchNormState, mode: BnMode) -> Result<(Tensor, BatchNormCache)> {
    let s = input.shape();
    if state.channels() != s.c {
        return Err(Error::dim("channels", state.channels(), s.c));
    }
    let count = s.n * s.plane();
    let (mean, inv_std) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::Validation(
                    "batch normalization in training mode needs at least 2 values per channel".into(),
                ));
            }
            let mut mean = vec![0.0; s.c];
            let mut var = vec![0.0; s.c];
            for c in 0..s.c {
                let m = (0..s.n).flat_map(|n| input.plane(n, c)).sum::<f64>() / count as f64;
                let v = (0..s.n)
                    .flat_map(|n| input.plane(n, c))
                    .map(|x| (x - m) * (x - m))
                    .sum::<f64>()
                    / count as f64;
                mean[c] = m;
                var[c] = v;
            }
            let unbias = count as f64 / (count - 1) as f64;
            for c in 0..s.c {
                state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean[c];
                state.running_var[c] =
                    state.momentum * state.running_var[c] + (1.0 - state.momentum) * var[c] * unbias;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
            (mean, inv_std)
        }
        BnMode::Infer => {
            let inv_std: Vec<f64> = state
                .running_var
                .iter()
                .map(|v| 1.0 / (v.max(0.0) + state.epsilon).sqrt())
                .collect();
            (state.running_mean.clone(), inv_std)
        }
    };
    let mut x_hat = input.clone();
    let mut out = input.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let (m, is, g, b) = (mean[c], inv_std[c], state.gamma[c], state.beta[c]);
            let xh = x_hat.plane_mut(n, c);
            for v in xh.iter_mut() {
                *v = (*v - m) * is;
            }
            for (o, &h) in out.plane_mut(n, c).iter_mut().zip(x_hat.plane(n, c)) {
                *o = g * h + b;
            }
        }
    }
    Ok((out, BatchNormCache { mode, x_hat, inv_std }))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let s = cache.x_hat.shape();
    grad_out.expect_shape(s)?;
    let count = (s.n * s.plane()) as f64;
    let mut d_gamma = vec![0.0; s.c];
    let mut d_beta = vec![0.0; s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                d_gamma[c] += g * h;
                d_beta[c] += g;
            }
        }
    }
    let mut dx = Tensor::zeros(s);
    for c in 0..s.c {
        let k = gamma[c] * cache.inv_std[c];
        for n in 0..s.n {
            let dst = dx.plane_mut(n, c);
            let (go, xh) = (grad_out.plane(n, c), cache.x_hat.plane(n, c));
            match cache.mode {
                BnMode::Train => {
                    for i in 0..dst.len() {
                        dst[i] = k * (go[i] - d_beta[c] / count - xh[i] * d_gamma[c] / count);
                    }
                }
                BnMode::Infer => {
                    for i in 0..dst.len() {
                        dst[i] = k * go[i];
                    }
                }
            }
        }
    }
    Ok((dx, d_gamma, d_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_moments(t: &Tensor, c: usize) -> (f64, f64) {
        let s = t.shape();
        let vals: Vec<f64> = (0..s.n).flat_map(|n| t.plane(n, c).to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn standardized_input_passes_through() {
        // Per channel: values ±1 -> mean 0, variance 1.
        let x = Tensor::from_fn(Shape::new(2, 2, 2, 2), |n, _, h, w| if (n + h + w) % 2 == 0 { 1.0 } else { -1.0 });
        let mut st = BatchNormState::new(2);
        let (y, _) = batchnorm(&x, &mut st, BnMode::Train).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn constant_input_collapses_to_beta() {
        let x = Tensor::filled(Shape::new(3, 1, 4, 4), 7.0);
        let mut st = BatchNormState::new(1);
        st.beta[0] = 0.25;
        let (y, _) = batchnorm(&x, &mut st, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn random_batch_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn(Shape::new(4, 3, 5, 5), |_, c, _, _| 3.0 * c as f64 + rng.gen_range(-2.0..5.0));
        let mut st = BatchNormState::new(3);
        let (y, _) = batchnorm(&x, &mut st, BnMode::Train).unwrap();
        for c in 0..3 {
            let (m, v) = channel_moments(&y, c);
            assert!(m.abs() < 1e-6, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn running_statistics_follow_moving_average() {
        let x = Tensor::from_fn(Shape::new(1, 1, 2, 2), |_, _, h, w| (h * 2 + w) as f64);
        let mut st = BatchNormState::new(1);
        batchnorm(&x, &mut st, BnMode::Train).unwrap();
        // batch mean 1.5, unbiased variance 5/3
        assert!((st.running_mean[0] - 0.15).abs() < 1e-12);
        assert!((st.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        assert!(st.running_var[0] >= 0.0);
    }

    #[test]
    fn single_value_per_channel_is_rejected_in_training() {
        let x = Tensor::filled(Shape::new(1, 2, 1, 1), 1.0);
        let mut st = BatchNormState::new(2);
        assert!(matches!(batchnorm(&x, &mut st, BnMode::Train), Err(Error::Validation(_))));
        assert!(batchnorm(&x, &mut st, BnMode::Infer).is_ok());
    }

    #[test]
    fn inference_ignores_batch_content() {
        let mut st = BatchNormState::new(1);
        st.running_mean[0] = 0.5;
        st.running_var[0] = 4.0;
        st.gamma[0] = 2.0;
        let a = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 100.0, -3.0]).unwrap();
        let b = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 0.0, 0.0]).unwrap();
        let (ya, _) = batchnorm(&a, &mut st, BnMode::Infer).unwrap();
        let (yb, _) = batchnorm(&b, &mut st, BnMode::Infer).unwrap();
        assert_eq!(ya.data()[0], yb.data()[0]);
        assert_eq!(st.running_mean[0], 0.5);
    }
}
