//! Central-difference gradient checking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::Result;

/// A map with a hand-written vector-Jacobian product.
pub trait Differentiable {
    fn forward(&self, input: &Tensor) -> Result<Tensor>;
    fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Step is `rel_step * max(|x|, min_scale)`.
    pub rel_step: f64,
    pub min_scale: f64,
    /// Probe at most this many coordinates (sampled without replacement).
    pub max_coords: Option<usize>,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            rel_step: 1e-3,
            min_scale: 1e-2,
            max_coords: None,
            floor: 1e-6,
            seed: 0,
        }
    }
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn probe_coords(n: usize, opts: &CheckOptions) -> Vec<usize> {
    let mut coords: Vec<usize> = (0..n).collect();
    if let Some(k) = opts.max_coords {
        if k < coords.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            coords.shuffle(&mut rng);
            coords.truncate(k);
            coords.sort_unstable();
        }
    }
    coords
}

/// Max relative error between `analytic` and central differences of `f` at `x`.
pub fn grad_check_fn(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], opts: &CheckOptions) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in probe_coords(x.len(), opts) {
        let h = opts.rel_step * x[i].abs().max(opts.min_scale);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric, opts.floor));
    }
    worst
}

/// Outcome of [`grad_check_fn_smooth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothCheck {
    pub max_error: f64,
    pub checked: usize,
    /// Coordinates whose difference stencil crossed a kink.
    pub skipped: usize,
}

/// Like [`grad_check_fn`] for piecewise-smooth `f`, which also returns an
/// id of the smooth piece it evaluated. Coordinates where `x + h` or `x - h`
/// lands on a different piece than `x` are skipped.
pub fn grad_check_fn_smooth(
    mut f: impl FnMut(&[f64]) -> (f64, u64),
    x: &[f64],
    analytic: &[f64],
    opts: &CheckOptions,
) -> SmoothCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let (_, piece) = f(x);
    let mut out = SmoothCheck {
        max_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = x.to_vec();
    for i in probe_coords(x.len(), opts) {
        let h = opts.rel_step * x[i].abs().max(opts.min_scale);
        probe[i] = x[i] + h;
        let (up, p_up) = f(&probe);
        probe[i] = x[i] - h;
        let (down, p_down) = f(&probe);
        probe[i] = x[i];
        if p_up != piece || p_down != piece {
            out.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        out.max_error = out.max_error.max(relative_error(analytic[i], numeric, opts.floor));
        out.checked += 1;
    }
    out
}

/// Checks `layer.backward` against central differences of `sum(r * layer(x))`
/// for a fixed random projection `r`.
pub fn grad_check(layer: &dyn Differentiable, input: &Tensor, opts: &CheckOptions) -> Result<f64> {
    let out = layer.forward(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let r = Tensor::from_fn(out.shape(), |_, _, _, _| rng.gen_range(-1.0..1.0));
    let analytic = layer.backward(input, &r)?;
    let shape = input.shape();
    let mut failure = None;
    let err = grad_check_fn(
        |x| {
            let t = Tensor::from_vec(shape, x.to_vec()).expect("shape is fixed");
            match layer.forward(&t).and_then(|y| y.dot(&r)) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        input.data(),
        analytic.data(),
        opts,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(err),
    }
}
