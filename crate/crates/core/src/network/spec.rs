use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    BatchNorm,
    /// Averages each channel down to 1x1.
    GlobalAvgPool,
    /// Dense layer on a 1x1 map; its weight is stored as (out, in, 1, 1).
    FullyConnected { out: usize },
    /// The source classifier's class-scoring layer, discarded on conversion.
    Classifier { classes: usize },
    /// 1x1 pixel-classification conv of an FCN.
    Score { classes: usize },
    /// Transpose conv upsampling, center-cropped to the network input size.
    Deconv {
        stride: usize,
        kernel: usize,
        learnable: bool,
    },
    /// `x + body(x)`; the body must preserve the channel count.
    Residual { body: Vec<LayerSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Multiplier for weights (and BN gamma).
    #[serde(default = "one")]
    pub lr_mult: f64,
    /// Multiplier for biases (and BN beta).
    #[serde(default = "two")]
    pub bias_lr_mult: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            lr_mult: 1.0,
            bias_lr_mult: 2.0,
        }
    }

    pub fn with_lr(mut self, lr_mult: f64, bias_lr_mult: f64) -> Self {
        self.lr_mult = lr_mult;
        self.bias_lr_mult = bias_lr_mult;
        self
    }

    pub fn is_conv_like(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { .. } | LayerKind::Score { .. } | LayerKind::FullyConnected { .. }
        )
    }

    /// Spatially global layers: those that make a net a classifier.
    pub fn is_global(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::GlobalAvgPool | LayerKind::FullyConnected { .. } | LayerKind::Classifier { .. }
        )
    }
}

/// Ordered layer graph plus the input channel count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape of one parameter tensor as declared by a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub dims: [usize; 4],
    pub role: ParamRole,
    pub lr_mult: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    /// Zero-initialized class scoring weights/bias.
    ScoreWeight,
    ScoreBias,
    /// Bilinear-initialized upsampling filter.
    Upsample,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    /// Buffers are updated by the forward pass, never by the optimizer.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        use ParamRole::*;
        [Weight, Bias, Gamma, Beta, ScoreWeight, ScoreBias, Upsample, RunningMean, RunningVar]
            .get(code as usize)
            .copied()
    }
}

impl NetworkSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec { input_channels, layers }
    }

    /// All layers in execution order, residual bodies flattened in place.
    pub fn walk(&self) -> Vec<&LayerSpec> {
        fn go<'a>(layers: &'a [LayerSpec], out: &mut Vec<&'a LayerSpec>) {
            for l in layers {
                out.push(l);
                if let LayerKind::Residual { body } = &l.kind {
                    go(body, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.layers, &mut out);
        out
    }

    pub fn is_fcn(&self) -> bool {
        self.walk().iter().any(|l| matches!(l.kind, LayerKind::Score { .. } | LayerKind::Deconv { .. }))
    }

    /// Product of the strides of every downsampling layer.
    pub fn downsampling(&self) -> usize {
        fn go(layers: &[LayerSpec]) -> usize {
            layers
                .iter()
                .map(|l| match &l.kind {
                    LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => *stride,
                    LayerKind::Residual { body } => go(body),
                    _ => 1,
                })
                .product()
        }
        go(&self.layers)
    }

    /// Checks names, channel bookkeeping and FCN structure; returns the
    /// parameter declarations in execution order.
    pub fn params(&self) -> Result<Vec<ParamDecl>> {
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be >= 1".into()));
        }
        let mut names = std::collections::HashSet::new();
        for l in self.walk() {
            if l.name.is_empty() || !names.insert(l.name.as_str()) {
                return Err(Error::Config(format!("layer name {:?} is empty or repeated", l.name)));
            }
            if !(l.lr_mult >= 0.0 && l.bias_lr_mult >= 0.0) {
                return Err(Error::Config(format!("layer {}: lr multipliers must be >= 0", l.name)));
            }
        }
        let scores = self.walk().iter().filter(|l| matches!(l.kind, LayerKind::Score { .. })).count();
        let deconvs = self.walk().iter().filter(|l| matches!(l.kind, LayerKind::Deconv { .. })).count();
        if scores + deconvs > 0 {
            let last = self.layers.last().map(|l| &l.kind);
            if scores != 1 || deconvs != 1 || !matches!(last, Some(LayerKind::Deconv { .. })) {
                return Err(Error::Config(
                    "an FCN needs exactly one score layer and one trailing deconv".into(),
                ));
            }
        }
        let mut decls = Vec::new();
        let mut spatial = true;
        let out = declare(&self.layers, self.input_channels, &mut spatial, &mut decls)?;
        if out == 0 {
            return Err(Error::Config("network produces no channels".into()));
        }
        Ok(decls)
    }

    /// Channel count of the final activation.
    pub fn output_channels(&self) -> Result<usize> {
        let mut spatial = true;
        declare(&self.layers, self.input_channels, &mut spatial, &mut Vec::new())
    }
}

fn decl(name: &str, suffix: &str, dims: [usize; 4], role: ParamRole, lr_mult: f64) -> ParamDecl {
    ParamDecl {
        name: format!("{name}.{suffix}"),
        dims,
        role,
        lr_mult,
    }
}

fn positive(layer: &str, what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("layer {layer}: {what} must be >= 1")));
    }
    Ok(())
}

fn declare(layers: &[LayerSpec], mut c: usize, spatial: &mut bool, out: &mut Vec<ParamDecl>) -> Result<usize> {
    for l in layers {
        let n = l.name.as_str();
        match &l.kind {
            LayerKind::Conv {
                out: f,
                kernel,
                stride,
                ..
            } => {
                positive(n, "out", *f)?;
                positive(n, "kernel", *kernel)?;
                positive(n, "stride", *stride)?;
                out.push(decl(n, "weight", [*f, c, *kernel, *kernel], ParamRole::Weight, l.lr_mult));
                out.push(decl(n, "bias", [1, 1, 1, *f], ParamRole::Bias, l.bias_lr_mult));
                c = *f;
            }
            LayerKind::FullyConnected { out: f } | LayerKind::Classifier { classes: f } => {
                positive(n, "width", *f)?;
                if *spatial {
                    return Err(Error::Config(format!("layer {n}: dense layer needs a global pooling layer before it")));
                }
                out.push(decl(n, "weight", [*f, c, 1, 1], ParamRole::Weight, l.lr_mult));
                out.push(decl(n, "bias", [1, 1, 1, *f], ParamRole::Bias, l.bias_lr_mult));
                c = *f;
            }
            LayerKind::Score { classes } => {
                positive(n, "classes", *classes)?;
                out.push(decl(n, "weight", [*classes, c, 1, 1], ParamRole::ScoreWeight, l.lr_mult));
                out.push(decl(n, "bias", [1, 1, 1, *classes], ParamRole::ScoreBias, l.bias_lr_mult));
                c = *classes;
            }
            LayerKind::Deconv {
                stride,
                kernel,
                learnable,
            } => {
                positive(n, "stride", *stride)?;
                positive(n, "kernel", *kernel)?;
                let mult = if *learnable { l.lr_mult } else { 0.0 };
                out.push(decl(n, "weight", [c, c, *kernel, *kernel], ParamRole::Upsample, mult));
            }
            LayerKind::BatchNorm => {
                out.push(decl(n, "gamma", [1, 1, 1, c], ParamRole::Gamma, l.lr_mult));
                out.push(decl(n, "beta", [1, 1, 1, c], ParamRole::Beta, l.bias_lr_mult));
                out.push(decl(n, "running_mean", [1, 1, 1, c], ParamRole::RunningMean, 0.0));
                out.push(decl(n, "running_var", [1, 1, 1, c], ParamRole::RunningVar, 0.0));
            }
            LayerKind::MaxPool { window, stride } => {
                positive(n, "window", *window)?;
                positive(n, "stride", *stride)?;
            }
            LayerKind::GlobalAvgPool => *spatial = false,
            LayerKind::Relu => {}
            LayerKind::Residual { body } => {
                let inner = declare(body, c, spatial, out)?;
                if inner != c {
                    return Err(Error::Config(format!(
                        "residual block {n} maps {c} channels to {inner}"
                    )));
                }
            }
        }
    }
    Ok(c)
}
