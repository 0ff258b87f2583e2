//! SGD with momentum and per-parameter learning-rate multipliers.

use super::Tensor;
use crate::error::{Error, Result};

/// Velocity buffers plus the global hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub base_lr: f64,
    pub momentum: f64,
    pub velocity: Vec<Tensor>,
}

impl OptimizerState {
    /// Zero velocities shaped like `params`.
    pub fn new(base_lr: f64, momentum: f64, params: &[&Tensor]) -> Result<Self> {
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {base_lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(OptimizerState {
            base_lr,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }
}

/// `v <- momentum*v - base_lr*lr_mult*g; p <- p + v`, for every parameter.
///
/// All gradients are checked before anything is written, so a non-finite
/// gradient leaves parameters and velocities untouched.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    lr_mults: &[f64],
    names: &[&str],
    opt: &mut OptimizerState,
) -> Result<()> {
    let k = params.len();
    for (what, len) in [("gradients", grads.len()), ("lr multipliers", lr_mults.len()), ("velocities", opt.velocity.len())] {
        if len != k {
            return Err(Error::Validation(format!("{what}: expected {k}, got {len}")));
        }
    }
    for i in 0..k {
        grads[i].expect_shape(params[i].shape())?;
        opt.velocity[i].expect_shape(params[i].shape())?;
        if !grads[i].all_finite() {
            let name = names.get(i).copied().unwrap_or("?");
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    for i in 0..k {
        let lr = opt.base_lr * lr_mults[i];
        let v = opt.velocity[i].data_mut();
        let p = params[i].data_mut();
        for ((vj, pj), &gj) in v.iter_mut().zip(p.iter_mut()).zip(grads[i].data()) {
            *vj = opt.momentum * *vj - lr * gj;
            *pj += *vj;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let mut p = t(&[1.0, -2.0, 0.5]);
        let g = t(&[0.3, 0.1, -4.0]);
        let mut opt = OptimizerState::new(0.1, 0.0, &[&p]).unwrap();
        sgd_momentum_step(&mut [&mut p], &[&g], &[1.0], &["w"], &mut opt).unwrap();
        let want = [1.0 - 0.1 * 0.3, -2.0 - 0.1 * 0.1, 0.5 + 0.1 * 4.0];
        assert_eq!(p.data(), &want);
    }

    #[test]
    fn two_steps_unroll_the_recurrence() {
        let (lr, m, g0) = (0.05, 0.9, 1.5);
        let mut p = t(&[0.0]);
        let g = t(&[g0]);
        let mut opt = OptimizerState::new(lr, m, &[&p]).unwrap();
        for _ in 0..2 {
            sgd_momentum_step(&mut [&mut p], &[&g], &[1.0], &["w"], &mut opt).unwrap();
        }
        assert!((p.data()[0] - (-lr * g0 * (2.0 + m))).abs() < 1e-15);
    }

    #[test]
    fn doubled_bias_rate_doubles_the_step() {
        let mut w = t(&[0.0]);
        let mut b = t(&[0.0]);
        let g = t(&[0.7]);
        let mut opt = OptimizerState::new(0.01, 0.99, &[&w, &b]).unwrap();
        sgd_momentum_step(&mut [&mut w, &mut b], &[&g, &g], &[1.0, 2.0], &["w", "b"], &mut opt).unwrap();
        assert_eq!(b.data()[0], 2.0 * w.data()[0]);
    }

    #[test]
    fn non_finite_gradient_rejects_whole_step() {
        let mut a = t(&[1.0]);
        let mut b = t(&[1.0]);
        let ga = t(&[1.0]);
        let gb = t(&[f64::NAN]);
        let mut opt = OptimizerState::new(0.1, 0.5, &[&a, &b]).unwrap();
        let err = sgd_momentum_step(&mut [&mut a, &mut b], &[&ga, &gb], &[1.0, 1.0], &["a", "b"], &mut opt);
        assert!(matches!(err, Err(Error::NonFiniteGradient(ref n)) if n == "b"));
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(opt.velocity[0].data(), &[0.0]);
    }

    #[test]
    fn momentum_out_of_range_is_rejected() {
        let p = t(&[0.0]);
        assert!(OptimizerState::new(0.1, 1.0, &[&p]).is_err());
        assert_eq!(OptimizerState::new(0.1, 0.99, &[&p]).unwrap().momentum, 0.99);
    }
}
