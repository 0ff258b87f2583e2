//! Forward and backward execution of a [`NetworkSpec`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::params::ParamStore;
use super::spec::{LayerKind, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm, batchnorm_backward, conv2d_backward, conv2d_forward, conv2d_transpose, conv2d_transpose_backward,
    maxpool, maxpool_backward, relu, relu_backward, BatchNormCache, BatchNormState, BnMode, MaxPoolIndices, Shape,
    Tensor,
};

/// Per-layer state the backward pass needs beyond the layer input.
#[derive(Debug, Clone)]
enum Extra {
    None,
    Pool(MaxPoolIndices),
    Norm(BatchNormCache),
    Crop { top: usize, left: usize, full: (usize, usize) },
    Residual(Box<Trace>),
}

/// Everything recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Tensor,
    /// Output of every top-level layer, in order.
    pub activations: Vec<Tensor>,
    extras: Vec<Extra>,
    /// New running statistics `(layer, mean, var)` from train-mode normalization.
    pub running_updates: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap_or(&self.input)
    }

    pub fn into_output(mut self) -> Tensor {
        self.activations.pop().unwrap_or(self.input)
    }

    /// Hash of every ReLU on/off state and max-pool selection. Two inputs
    /// with equal patterns lie in the same piecewise-smooth region.
    pub fn kink_pattern(&self, spec: &NetworkSpec) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash_kinks(&spec.layers, &mut h);
        h.finish()
    }

    fn hash_kinks(&self, layers: &[LayerSpec], h: &mut DefaultHasher) {
        for ((layer, y), extra) in layers.iter().zip(&self.activations).zip(&self.extras) {
            match (&layer.kind, extra) {
                (LayerKind::Relu, _) => {
                    for chunk in y.data().chunks(64) {
                        let bits = chunk.iter().enumerate().fold(0u64, |b, (i, &v)| b | (u64::from(v > 0.0) << i));
                        h.write_u64(bits);
                    }
                }
                (_, Extra::Pool(idx)) => idx.argmax.hash(h),
                (LayerKind::Residual { body }, Extra::Residual(inner)) => inner.hash_kinks(body, h),
                _ => {}
            }
        }
    }

    fn layer_input(&self, k: usize) -> &Tensor {
        if k == 0 {
            &self.input
        } else {
            &self.activations[k - 1]
        }
    }
}

/// One gradient per stored tensor (zero for buffers), plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

fn pname(layer: &LayerSpec, suffix: &str) -> String {
    format!("{}.{suffix}", layer.name)
}

fn bias_slice<'a>(params: &'a ParamStore, layer: &LayerSpec) -> Result<&'a [f64]> {
    Ok(params.require(&pname(layer, "bias"))?.data())
}

fn bn_state(params: &ParamStore, layer: &LayerSpec) -> Result<BatchNormState> {
    let get = |s: &str| -> Result<Vec<f64>> { Ok(params.require(&pname(layer, s))?.data().to_vec()) };
    let gamma = get("gamma")?;
    let mut st = BatchNormState::new(gamma.len());
    st.gamma = gamma;
    st.beta = get("beta")?;
    st.running_mean = get("running_mean")?;
    st.running_var = get("running_var")?;
    Ok(st)
}

/// Runs `spec` on `input`. `Train` uses batch statistics for normalization
/// and reports new running statistics in the trace; `Infer` is a pure function
/// of the parameters.
pub fn forward(spec: &NetworkSpec, params: &ParamStore, input: &Tensor, mode: BnMode) -> Result<Trace> {
    let s = input.shape();
    if s.c != spec.input_channels {
        return Err(Error::dim("input channels", spec.input_channels, s.c));
    }
    run(&spec.layers, params, input.clone(), mode, (s.h, s.w))
}

fn run(layers: &[LayerSpec], params: &ParamStore, input: Tensor, mode: BnMode, target: (usize, usize)) -> Result<Trace> {
    let mut trace = Trace {
        input,
        activations: Vec::with_capacity(layers.len()),
        extras: Vec::with_capacity(layers.len()),
        running_updates: Vec::new(),
    };
    for (k, layer) in layers.iter().enumerate() {
        let x = trace.layer_input(k);
        let (y, extra) = match &layer.kind {
            LayerKind::Conv {
                stride, padding, ..
            } => {
                let w = params.require(&pname(layer, "weight"))?;
                (conv2d_forward(x, w, Some(bias_slice(params, layer)?), *stride, *padding)?, Extra::None)
            }
            LayerKind::FullyConnected { .. } | LayerKind::Classifier { .. } | LayerKind::Score { .. } => {
                let w = params.require(&pname(layer, "weight"))?;
                (conv2d_forward(x, w, Some(bias_slice(params, layer)?), 1, 0)?, Extra::None)
            }
            LayerKind::Relu => (relu(x), Extra::None),
            LayerKind::MaxPool { window, stride } => {
                let (y, idx) = maxpool(x, *window, *stride)?;
                (y, Extra::Pool(idx))
            }
            LayerKind::BatchNorm => {
                let mut st = bn_state(params, layer)?;
                let (y, cache) = batchnorm(x, &mut st, mode)?;
                if mode == BnMode::Train {
                    trace
                        .running_updates
                        .push((layer.name.clone(), st.running_mean, st.running_var));
                }
                (y, Extra::Norm(cache))
            }
            LayerKind::GlobalAvgPool => {
                let s = x.shape();
                let area = s.plane() as f64;
                let y = Tensor::from_fn(Shape::new(s.n, s.c, 1, 1), |n, c, _, _| {
                    x.plane(n, c).iter().sum::<f64>() / area
                });
                (y, Extra::None)
            }
            LayerKind::Deconv { stride, .. } => {
                let w = params.require(&pname(layer, "weight"))?;
                let full = conv2d_transpose(x, w, *stride)?;
                let fs = full.shape();
                if fs.h < target.0 || fs.w < target.1 {
                    return Err(Error::Config(format!(
                        "layer {}: upsampled map {}x{} is smaller than the input {}x{}",
                        layer.name, fs.h, fs.w, target.0, target.1
                    )));
                }
                let (top, left) = ((fs.h - target.0) / 2, (fs.w - target.1) / 2);
                (
                    full.crop(top, left, target.0, target.1)?,
                    Extra::Crop {
                        top,
                        left,
                        full: (fs.h, fs.w),
                    },
                )
            }
            LayerKind::Residual { body } => {
                let inner = run(body, params, x.clone(), mode, target)?;
                let y = x.add(inner.output())?;
                trace.running_updates.extend(inner.running_updates.iter().cloned());
                (y, Extra::Residual(Box::new(inner)))
            }
        };
        trace.activations.push(y);
        trace.extras.push(extra);
    }
    Ok(trace)
}

/// Back-propagates `grad_out` (gradient of the loss with respect to the
/// trace output) to every parameter and to the input.
pub fn backward(spec: &NetworkSpec, params: &ParamStore, trace: &Trace, grad_out: &Tensor) -> Result<Gradients> {
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    let input = back(&spec.layers, params, trace, grad_out.clone(), &mut grads)?;
    Ok(Gradients { params: grads, input })
}

fn accumulate(grads: &mut [Tensor], i: usize, g: &Tensor) -> Result<()> {
    grads[i].add_assign(g)
}

fn accumulate_slice(grads: &mut [Tensor], i: usize, g: &[f64]) -> Result<()> {
    let t = &mut grads[i];
    if t.len() != g.len() {
        return Err(Error::dim("parameter length", t.len(), g.len()));
    }
    for (a, b) in t.data_mut().iter_mut().zip(g) {
        *a += b;
    }
    Ok(())
}

fn back(layers: &[LayerSpec], params: &ParamStore, trace: &Trace, grad_out: Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
    trace.output().expect_shape(grad_out.shape())?;
    let mut g = grad_out;
    for (k, layer) in layers.iter().enumerate().rev() {
        let x = trace.layer_input(k);
        g = match (&layer.kind, &trace.extras[k]) {
            (LayerKind::Conv { stride, padding, .. }, _) => {
                let wi = params.require_index(&pname(layer, "weight"))?;
                let cg = conv2d_backward(x, &params.param(wi).value, &g, *stride, *padding)?;
                accumulate(grads, wi, &cg.kernel)?;
                accumulate_slice(grads, params.require_index(&pname(layer, "bias"))?, &cg.bias)?;
                cg.input
            }
            (LayerKind::FullyConnected { .. } | LayerKind::Classifier { .. } | LayerKind::Score { .. }, _) => {
                let wi = params.require_index(&pname(layer, "weight"))?;
                let cg = conv2d_backward(x, &params.param(wi).value, &g, 1, 0)?;
                accumulate(grads, wi, &cg.kernel)?;
                accumulate_slice(grads, params.require_index(&pname(layer, "bias"))?, &cg.bias)?;
                cg.input
            }
            (LayerKind::Relu, _) => relu_backward(x, &g)?,
            (LayerKind::MaxPool { .. }, Extra::Pool(idx)) => maxpool_backward(idx, &g)?,
            (LayerKind::BatchNorm, Extra::Norm(cache)) => {
                let gamma = params.require(&pname(layer, "gamma"))?;
                let (dx, dgamma, dbeta) = batchnorm_backward(cache, gamma.data(), &g)?;
                accumulate_slice(grads, params.require_index(&pname(layer, "gamma"))?, &dgamma)?;
                accumulate_slice(grads, params.require_index(&pname(layer, "beta"))?, &dbeta)?;
                dx
            }
            (LayerKind::GlobalAvgPool, _) => {
                let s = x.shape();
                let area = s.plane() as f64;
                Tensor::from_fn(s, |n, c, _, _| g.get(n, c, 0, 0) / area)
            }
            (LayerKind::Deconv { stride, .. }, Extra::Crop { top, left, full }) => {
                let wi = params.require_index(&pname(layer, "weight"))?;
                let g_full = g.uncrop(*top, *left, full.0, full.1);
                let (dx, dw) = conv2d_transpose_backward(x, &params.param(wi).value, &g_full, *stride)?;
                accumulate(grads, wi, &dw)?;
                dx
            }
            (LayerKind::Residual { body }, Extra::Residual(inner)) => {
                let through = back(body, params, inner, g.clone(), grads)?;
                g.add(&through)?
            }
            _ => return Err(Error::Validation(format!("trace does not match layer {}", layer.name))),
        };
    }
    Ok(g)
}
