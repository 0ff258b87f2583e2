//! Finite-difference checks of every layer kind and of a toy FCN.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::network::{backward, fcn_convert, forward, add_batchnorm, LayerKind, LayerSpec, NetworkSpec, ParamRole, ParamStore};
use crate::tensor::{
    batchnorm, batchnorm_backward, conv2d_backward, conv2d_forward, conv2d_transpose, conv2d_transpose_backward,
    grad_check_fn, grad_check_fn_smooth, maxpool, maxpool_backward, relu, relu_backward, softmax_xent, BatchNormState,
    BnMode, CheckOptions, LabelMap, LossNorm, Shape, Tensor,
};

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub tolerance: f64,
    pub rel_step: f64,
    pub seed: u64,
    /// Negates every analytic gradient. The suite must then fail.
    pub flip_sign: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            tolerance: 1e-4,
            rel_step: 1e-3,
            seed: 0,
            flip_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

struct Ctx {
    opts: SuiteOptions,
    rng: ChaCha8Rng,
    results: Vec<CheckResult>,
}

impl Ctx {
    fn random(&mut self, shape: Shape) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    fn check_options(&self) -> CheckOptions {
        CheckOptions {
            rel_step: self.opts.rel_step,
            seed: self.opts.seed,
            ..Default::default()
        }
    }

    fn sign(&self) -> f64 {
        if self.opts.flip_sign {
            -1.0
        } else {
            1.0
        }
    }

    fn record(&mut self, name: &str, max_error: f64, checked: usize, skipped: usize) {
        let passed = max_error < self.opts.tolerance && checked > 0;
        self.results.push(CheckResult {
            name: name.to_string(),
            max_error,
            checked,
            skipped,
            passed,
        });
    }

    /// Checks the vector-Jacobian product `vjp(r)` of `f` at `x` against
    /// central differences of `<r, f(x)>` for a random projection `r`.
    fn map(
        &mut self,
        name: &str,
        x: &Tensor,
        f: impl Fn(&Tensor) -> Result<Tensor>,
        vjp: impl Fn(&Tensor) -> Result<Tensor>,
    ) -> Result<()> {
        let y = f(x)?;
        let r = self.random(y.shape());
        let analytic = vjp(&r)?.scale(self.sign());
        let shape = x.shape();
        let err = grad_check_fn(
            |v| {
                let t = Tensor::from_vec(shape, v.to_vec()).expect("fixed shape");
                f(&t).and_then(|y| y.dot(&r)).unwrap_or(f64::NAN)
            },
            x.data(),
            analytic.data(),
            &self.check_options(),
        );
        self.record(name, err, x.len(), 0);
        Ok(())
    }
}

/// Values spread on a grid with random order, so no two are closer than
/// `gap` and none lies within `gap / 2` of zero.
fn separated(shape: Shape, gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.len();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * gap).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).expect("length matches")
}

/// Conv, ReLU, pool, global head; converted to a segmenter with a
/// stride-2 upsampling layer.
pub fn toy_fcn(batchnorm: bool) -> Result<NetworkSpec> {
    let classifier = NetworkSpec::new(
        3,
        vec![
            LayerSpec::new(
                "conv1",
                LayerKind::Conv {
                    out: 4,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
            ),
            LayerSpec::new("relu1", LayerKind::Relu),
            LayerSpec::new("pool1", LayerKind::MaxPool { window: 2, stride: 2 }),
            LayerSpec::new("gap", LayerKind::GlobalAvgPool),
            LayerSpec::new("fc2", LayerKind::FullyConnected { out: 6 }),
            LayerSpec::new("relu2", LayerKind::Relu),
            LayerSpec::new("cls", LayerKind::Classifier { classes: 5 }),
        ],
    );
    let fcn = fcn_convert(&classifier)?;
    Ok(if batchnorm { add_batchnorm(&fcn) } else { fcn })
}

fn network_check(ctx: &mut Ctx, name: &str, spec: &NetworkSpec) -> Result<()> {
    let mut params = ParamStore::init(spec, ctx.opts.seed)?;
    for i in 0..params.len() {
        let role = params.param(i).role;
        if role.is_buffer() {
            continue;
        }
        let shape = params.param(i).value.shape();
        let mut t = ctx.random(shape).scale(0.5);
        if role == ParamRole::Gamma {
            t = t.map(|v| 1.0 + 0.3 * v);
        }
        params.param_mut(i).value = t;
    }
    let x = ctx.random(Shape::new(2, spec.input_channels, 8, 8));
    let labels = LabelMap::new(2, 8, 8, (0..128).map(|_| ctx.rng.gen_range(0..2u8)).collect())?;
    let trace = forward(spec, &params, &x, BnMode::Train)?;
    let (_, g) = softmax_xent(trace.output(), &labels, LossNorm::Mean)?;
    let grads = backward(spec, &params, &trace, &g)?;
    let trainable: Vec<usize> = (0..params.len()).filter(|&i| !params.param(i).role.is_buffer()).collect();
    let mut x0 = Vec::new();
    let mut analytic = Vec::new();
    for &i in &trainable {
        x0.extend_from_slice(params.param(i).value.data());
        analytic.extend(grads.params[i].data().iter().map(|v| v * ctx.sign()));
    }
    let mut probe = params.clone();
    let res = grad_check_fn_smooth(
        |v| {
            let mut off = 0;
            for &i in &trainable {
                let t = &mut probe.param_mut(i).value;
                let n = t.len();
                t.data_mut().copy_from_slice(&v[off..off + n]);
                off += n;
            }
            match forward(spec, &probe, &x, BnMode::Train) {
                Ok(tr) => {
                    let loss = softmax_xent(tr.output(), &labels, LossNorm::Mean).map_or(f64::NAN, |l| l.0);
                    (loss, tr.kink_pattern(spec))
                }
                Err(_) => (f64::NAN, 0),
            }
        },
        &x0,
        &analytic,
        &ctx.check_options(),
    );
    ctx.record(name, res.max_error, res.checked, res.skipped);
    Ok(())
}

/// Runs every check; the suite passes when each result passes.
pub fn gradient_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut ctx = Ctx {
        opts: *opts,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        results: Vec::new(),
    };

    let x = ctx.random(Shape::new(2, 3, 7, 7));
    let k = ctx.random(Shape::new(4, 3, 3, 3));
    let b: Vec<f64> = (0..4).map(|i| 0.1 * i as f64 - 0.2).collect();
    let fwd = |x: &Tensor, k: &Tensor, b: &[f64]| conv2d_forward(x, k, Some(b), 2, 1);
    ctx.map("conv2d/input", &x, |t| fwd(t, &k, &b), |r| Ok(conv2d_backward(&x, &k, r, 2, 1)?.input))?;
    ctx.map("conv2d/kernel", &k, |t| fwd(&x, t, &b), |r| Ok(conv2d_backward(&x, &k, r, 2, 1)?.kernel))?;
    let bt = Tensor::from_vec(Shape::new(1, 1, 1, 4), b.clone())?;
    ctx.map(
        "conv2d/bias",
        &bt,
        |t| fwd(&x, &k, t.data()),
        |r| Tensor::from_vec(bt.shape(), conv2d_backward(&x, &k, r, 2, 1)?.bias),
    )?;

    let xt = ctx.random(Shape::new(2, 2, 3, 4));
    let kt = ctx.random(Shape::new(2, 3, 4, 4));
    ctx.map(
        "deconv/input",
        &xt,
        |t| conv2d_transpose(t, &kt, 2),
        |r| Ok(conv2d_transpose_backward(&xt, &kt, r, 2)?.0),
    )?;
    ctx.map(
        "deconv/kernel",
        &kt,
        |t| conv2d_transpose(&xt, t, 2),
        |r| Ok(conv2d_transpose_backward(&xt, &kt, r, 2)?.1),
    )?;

    let xr = separated(Shape::new(2, 2, 5, 5), 0.02, &mut ctx.rng);
    ctx.map("relu", &xr, |t| Ok(relu(t)), |r| relu_backward(&xr, r))?;
    let xp = separated(Shape::new(2, 2, 8, 8), 0.02, &mut ctx.rng);
    ctx.map(
        "maxpool",
        &xp,
        |t| Ok(maxpool(t, 2, 2)?.0),
        |r| maxpool_backward(&maxpool(&xp, 2, 2)?.1, r),
    )?;

    let xb = ctx.random(Shape::new(3, 2, 4, 4));
    let mut st = BatchNormState::new(2);
    st.gamma = vec![1.3, 0.7];
    st.beta = vec![0.2, -0.4];
    st.running_mean = vec![0.1, -0.2];
    st.running_var = vec![0.8, 1.5];
    for (name, mode) in [("batchnorm/train", BnMode::Train), ("batchnorm/infer", BnMode::Infer)] {
        let run = |t: &Tensor, s: &BatchNormState| batchnorm(t, &mut s.clone(), mode);
        ctx.map(name, &xb, |t| Ok(run(t, &st)?.0), |r| {
            let (_, cache) = run(&xb, &st)?;
            Ok(batchnorm_backward(&cache, &st.gamma, r)?.0)
        })?;
    }
    let affine = Tensor::from_vec(Shape::new(1, 1, 2, 2), [st.gamma.clone(), st.beta.clone()].concat())?;
    ctx.map(
        "batchnorm/affine",
        &affine,
        |t| {
            let mut s = st.clone();
            s.gamma = t.data()[..2].to_vec();
            s.beta = t.data()[2..].to_vec();
            Ok(batchnorm(&xb, &mut s, BnMode::Train)?.0)
        },
        |r| {
            let (_, cache) = batchnorm(&xb, &mut st.clone(), BnMode::Train)?;
            let (_, dg, db) = batchnorm_backward(&cache, &st.gamma, r)?;
            Tensor::from_vec(affine.shape(), [dg, db].concat())
        },
    )?;

    let scores = ctx.random(Shape::new(2, 3, 4, 4)).scale(3.0);
    let mut labels: Vec<u8> = (0..32).map(|_| ctx.rng.gen_range(0..3u8)).collect();
    labels[5] = crate::tensor::IGNORE;
    let labels = LabelMap::new(2, 4, 4, labels)?;
    let (_, g) = softmax_xent(&scores, &labels, LossNorm::Mean)?;
    let g = g.scale(ctx.sign());
    let err = grad_check_fn(
        |v| {
            let t = Tensor::from_vec(scores.shape(), v.to_vec()).expect("fixed shape");
            softmax_xent(&t, &labels, LossNorm::Mean).map_or(f64::NAN, |l| l.0)
        },
        scores.data(),
        g.data(),
        &ctx.check_options(),
    );
    ctx.record("softmax_xent", err, scores.len(), 0);

    let chain = NetworkSpec::new(
        3,
        vec![
            LayerSpec::new(
                "conv",
                LayerKind::Conv {
                    out: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
            ),
            LayerSpec::new("relu", LayerKind::Relu),
        ],
    );
    network_check(&mut ctx, "conv+relu+loss", &chain)?;
    network_check(&mut ctx, "toy-fcn", &toy_fcn(false)?)?;
    network_check(&mut ctx, "toy-fcn-bn", &toy_fcn(true)?)?;
    Ok(ctx.results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub cases: usize,
    pub max_error: f64,
}

/// Compares `cases` random convolutions and as many transpose convolutions
/// with products against the explicit sparse matrix of the same operator.
pub fn conv_matrix_oracle(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    for _ in 0..cases {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let kernel: usize = rng.gen_range(1..6);
        let stride = rng.gen_range(1..4);
        let (oh, ow): (usize, usize) = (rng.gen_range(1..7), rng.gen_range(1..7));
        // Output size first; the input is the size that produces it exactly.
        let span = (oh.min(ow) - 1) * stride + kernel;
        let padding = rng.gen_range(0..=(kernel - 1).min((span - 1) / 2));
        let h = (oh - 1) * stride + kernel - 2 * padding;
        let w = (ow - 1) * stride + kernel - 2 * padding;
        let mut random = |shape: Shape| Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let k = random(Shape::new(cout, cin, kernel, kernel));
        let x = random(Shape::new(1, cin, h, w));
        let y = conv2d_forward(&x, &k, None, stride, padding)?;
        let m = crate::tensor::ConvMatrix::new(&k, h, w, stride, padding)?;
        for (a, b) in y.data().iter().zip(m.multiply(x.data())?) {
            max_error = max_error.max((a - b).abs());
        }

        // The transpose of a stride-s unpadded conv from (ih, iw) to (oh, ow).
        let kt = random(Shape::new(cout, cin, kernel, kernel));
        let xt = random(Shape::new(1, cout, oh, ow));
        let yt = conv2d_transpose(&xt, &kt, stride)?;
        let (ih, iw) = ((oh - 1) * stride + kernel, (ow - 1) * stride + kernel);
        let mt = crate::tensor::conv2d_as_matrix(&kt, (ih, iw), stride)?;
        for (a, b) in yt.data().iter().zip(mt.multiply_transpose(xt.data())?) {
            max_error = max_error.max((a - b).abs());
        }
    }
    Ok(OracleReport { cases, max_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_sign_flip_is_caught() {
        let ok = gradient_suite(&SuiteOptions::default()).unwrap();
        for r in &ok {
            assert!(r.passed, "{r:?}");
        }
        let bad = gradient_suite(&SuiteOptions {
            flip_sign: true,
            ..Default::default()
        })
        .unwrap();
        for r in &bad {
            assert!(!r.passed, "{r:?}");
            assert!((r.max_error - 2.0).abs() < 1e-3, "{r:?}");
        }
    }

    #[test]
    fn conv_oracle_agrees() {
        let r = conv_matrix_oracle(40, 1).unwrap();
        assert!(r.max_error < 1e-10, "{r:?}");
    }
}
