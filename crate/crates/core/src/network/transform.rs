//! Structural rewrites: classifier to FCN, batch-norm insertion, RGB-D input.

use super::params::ParamStore;
use super::spec::{LayerKind, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Background and polyp.
pub const CLASSES: usize = 2;
pub const SCORE_LR_MULT: f64 = 10.0;
pub const DEPTH_LR_MULT: f64 = 10.0;

/// Turns a classifier into a fully convolutional segmenter.
///
/// Global pooling is dropped, dense layers become 1x1 convolutions holding
/// the same weights, the class-scoring layer is replaced by a zero-initialized
/// 2-class 1x1 score conv, and a bilinear deconvolution with stride equal to
/// the total downsampling and kernel twice that is appended.
pub fn fcn_convert(classifier: &NetworkSpec) -> Result<NetworkSpec> {
    if classifier.is_fcn() {
        return Err(Error::Conversion("network is already fully convolutional".into()));
    }
    if !classifier.layers.iter().any(LayerSpec::is_global) {
        return Err(Error::Conversion("network has no spatially global layers to convert".into()));
    }
    let mut layers = Vec::with_capacity(classifier.layers.len() + 1);
    for l in &classifier.layers {
        match l.kind {
            LayerKind::GlobalAvgPool | LayerKind::Classifier { .. } => {}
            LayerKind::FullyConnected { out } => layers.push(LayerSpec {
                kind: LayerKind::Conv {
                    out,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
                ..l.clone()
            }),
            _ => layers.push(l.clone()),
        }
    }
    let stride = classifier.downsampling();
    layers.push(
        LayerSpec::new("score", LayerKind::Score { classes: CLASSES }).with_lr(SCORE_LR_MULT, 2.0 * SCORE_LR_MULT),
    );
    layers.push(
        LayerSpec::new(
            "upscore",
            LayerKind::Deconv {
                stride,
                kernel: 2 * stride,
                learnable: true,
            },
        )
        .with_lr(1.0, 0.0),
    );
    let fcn = NetworkSpec::new(classifier.input_channels, layers);
    fcn.params()?;
    Ok(fcn)
}

/// Inserts a batch-norm layer between every convolution and the activation
/// that directly follows it, including inside residual blocks.
pub fn add_batchnorm(spec: &NetworkSpec) -> NetworkSpec {
    fn go(layers: &[LayerSpec]) -> Vec<LayerSpec> {
        let mut out = Vec::with_capacity(layers.len() * 2);
        for (k, l) in layers.iter().enumerate() {
            match &l.kind {
                LayerKind::Residual { body } => out.push(LayerSpec {
                    kind: LayerKind::Residual { body: go(body) },
                    ..l.clone()
                }),
                _ => out.push(l.clone()),
            }
            let conv = matches!(l.kind, LayerKind::Conv { .. });
            let next_is_relu = layers.get(k + 1).is_some_and(|n| n.kind == LayerKind::Relu);
            if conv && next_is_relu {
                out.push(LayerSpec::new(format!("{}_bn", l.name), LayerKind::BatchNorm));
            }
        }
        out
    }
    NetworkSpec::new(spec.input_channels, go(&spec.layers))
}

/// Widens the first convolution to accept a fourth (depth) input channel.
///
/// The new filter slice is the mean of the three RGB slices and the layer's
/// learning rate is raised tenfold.
pub fn rgbd_extend(spec: &NetworkSpec, params: &ParamStore) -> Result<(NetworkSpec, ParamStore)> {
    if spec.input_channels != 3 {
        return Err(Error::Conversion(format!(
            "depth extension needs a 3-channel network, got {} channels",
            spec.input_channels
        )));
    }
    let mut layers = spec.layers.clone();
    let first = layers
        .iter_mut()
        .find(|l| l.is_conv_like())
        .ok_or_else(|| Error::Conversion("network has no convolution to extend".into()))?;
    if !matches!(first.kind, LayerKind::Conv { .. }) {
        return Err(Error::Conversion(format!("first parametrized layer {} is not a convolution", first.name)));
    }
    first.lr_mult = DEPTH_LR_MULT;
    first.bias_lr_mult = 2.0 * DEPTH_LR_MULT;
    let weight_name = format!("{}.weight", first.name);

    let old = params.require(&weight_name)?;
    let s = old.shape();
    let widened = Tensor::from_fn(Shape::new(s.n, 4, s.h, s.w), |f, c, i, j| {
        if c < 3 {
            old.get(f, c, i, j)
        } else {
            (old.get(f, 0, i, j) + old.get(f, 1, i, j) + old.get(f, 2, i, j)) / 3.0
        }
    });
    let new_spec = NetworkSpec::new(4, layers);
    let mut new_params = ParamStore::carry_over(&new_spec, params, 0)?;
    *new_params
        .get_mut(&weight_name)
        .ok_or_else(|| Error::Conversion(format!("missing {weight_name}")))? = widened;
    Ok((new_spec, new_params))
}
