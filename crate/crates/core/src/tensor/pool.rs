//! ReLU and max pooling.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Passes `grad_out` through wherever the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Flat input offsets of each pooled maximum, plus the input shape they index.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<usize>,
}

/// Max pooling with a square `window`. Trailing rows/cols that do not fill a
/// whole window are dropped. Ties go to the first element in row-major order.
pub fn maxpool(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, MaxPoolIndices)> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be positive".into()));
    }
    let s = input.shape();
    if s.h < window {
        return Err(Error::dim("rows", window, s.h));
    }
    if s.w < window {
        return Err(Error::dim("cols", window, s.w));
    }
    let oh = (s.h - window) / stride + 1;
    let ow = (s.w - window) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut argmax = Vec::with_capacity(out.len());
    let x = input.data();
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * stride * s.w + j * stride;
                    for a in 0..window {
                        for b in 0..window {
                            let idx = base + (i * stride + a) * s.w + j * stride + b;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.data_mut()[o] = x[best];
                    argmax.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((out, MaxPoolIndices { input_shape: s, argmax }))
}

pub fn maxpool_backward(indices: &MaxPoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::dim("pooled elements", indices.argmax.len(), grad_out.len()));
    }
    let mut d = Tensor::zeros(indices.input_shape);
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        d.data_mut()[idx] += g;
    }
    Ok(d)
}
