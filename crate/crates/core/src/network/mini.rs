//! Miniature classifier family used as conversion sources.

use serde::{Deserialize, Serialize};

use super::spec::{LayerKind, LayerSpec, NetworkSpec};
use super::transform::{add_batchnorm, fcn_convert};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiniArch {
    /// 4 convolutions and one dense layer.
    MiniAlex,
    /// 6 convolutions and one dense layer.
    MiniVgg,
    /// A stem convolution and one two-conv identity block per stage, with
    /// batch normalization inside the blocks.
    MiniResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Bn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiniConfig {
    pub arch: MiniArch,
    /// Channel width of the first stage; later stages use 2x and 4x.
    pub width: usize,
    /// Total spatial downsampling, a power of two in `2..=32`.
    pub downsample: usize,
    /// Output width of the classifier head.
    pub classes: usize,
}

impl Default for MiniConfig {
    fn default() -> Self {
        MiniConfig {
            arch: MiniArch::MiniAlex,
            width: 8,
            downsample: 8,
            classes: 10,
        }
    }
}

fn conv(name: String, out: usize) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Conv {
            out,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
    )
}

fn relu(name: String) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Relu)
}

fn pool(name: String) -> LayerSpec {
    LayerSpec::new(name, LayerKind::MaxPool { window: 2, stride: 2 })
}

/// The classifier with global pooling, one dense layer and a class head.
pub fn mini_classifier(cfg: &MiniConfig) -> Result<NetworkSpec> {
    if !(2..=32).contains(&cfg.downsample) || !cfg.downsample.is_power_of_two() {
        return Err(Error::Config(format!(
            "downsample must be a power of two in 2..=32, got {}",
            cfg.downsample
        )));
    }
    if cfg.width == 0 || cfg.classes == 0 {
        return Err(Error::Config("width and classes must be >= 1".into()));
    }
    let stages = cfg.downsample.trailing_zeros() as usize;
    let stage_width = |s: usize| cfg.width << s.min(2);
    let mut layers = Vec::new();
    let mut top = cfg.width;
    match cfg.arch {
        MiniArch::MiniAlex | MiniArch::MiniVgg => {
            let nconv = if cfg.arch == MiniArch::MiniAlex { 4 } else { 6 };
            let mut k = 0;
            for s in 0..stages {
                while k < nconv && k * stages / nconv == s {
                    top = stage_width(s);
                    layers.push(conv(format!("conv{}", k + 1), top));
                    layers.push(relu(format!("relu{}", k + 1)));
                    k += 1;
                }
                layers.push(pool(format!("pool{}", s + 1)));
            }
        }
        MiniArch::MiniResidual => {
            top = 2 * cfg.width;
            layers.push(conv("conv1".into(), top));
            layers.push(LayerSpec::new("conv1_bn", LayerKind::BatchNorm));
            layers.push(relu("relu1".into()));
            for s in 0..stages {
                layers.push(pool(format!("pool{}", s + 1)));
                let b = s + 1;
                let body = vec![
                    conv(format!("res{b}a"), top),
                    LayerSpec::new(format!("res{b}a_bn"), LayerKind::BatchNorm),
                    relu(format!("res{b}a_relu")),
                    conv(format!("res{b}b"), top),
                    LayerSpec::new(format!("res{b}b_bn"), LayerKind::BatchNorm),
                ];
                layers.push(LayerSpec::new(format!("res{b}"), LayerKind::Residual { body }));
                layers.push(relu(format!("res{b}_relu")));
            }
        }
    }
    layers.push(LayerSpec::new("gap", LayerKind::GlobalAvgPool));
    layers.push(LayerSpec::new("fc6", LayerKind::FullyConnected { out: 2 * top }));
    layers.push(relu("fc6_relu".into()));
    layers.push(LayerSpec::new("cls", LayerKind::Classifier { classes: cfg.classes }));
    let spec = NetworkSpec::new(3, layers);
    spec.params()?;
    Ok(spec)
}

/// Converted segmenter, optionally with batch normalization inserted.
pub fn mini_fcn(cfg: &MiniConfig, variant: Variant) -> Result<NetworkSpec> {
    let fcn = fcn_convert(&mini_classifier(cfg)?)?;
    Ok(match variant {
        Variant::Plain => fcn,
        Variant::Bn => add_batchnorm(&fcn),
    })
}
