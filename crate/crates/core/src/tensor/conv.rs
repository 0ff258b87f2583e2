//! Strided 2-D convolution (im2col + GEMM), its explicit sparse-matrix form,
//! and transpose convolution as the adjoint of the same matrix.

use log::warn;

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Output length along one axis: `(input + 2*padding - kernel) / stride + 1`.
///
/// Fails when the window does not fit or the division is not exact.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let span = input + 2 * padding;
    if span < kernel {
        return Err(Error::Config(format!(
            "kernel {kernel} larger than padded input {span}"
        )));
    }
    if !(span - kernel).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "non-integral output size: ({input} + 2*{padding} - {kernel}) / {stride}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one (C, H, W) item into a `[C*Kh*Kw, OH*OW]` column matrix.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        dst[oi * g.ow + oj] = if ii >= 0 && jj >= 0 && (ii as usize) < g.h && (jj as usize) < g.w {
                            x[(c * g.h + ii as usize) * g.w + jj as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii as usize >= g.h {
                        continue;
                    }
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj < 0 || jj as usize >= g.w {
                            continue;
                        }
                        x[(c * g.h + ii as usize) * g.w + jj as usize] += src[oi * g.ow + oj];
                    }
                }
            }
        }
    }
}

fn forward_geometry(input: Shape, kernel: Shape, stride: usize, padding: usize) -> Result<Geometry> {
    if kernel.c != input.c {
        return Err(Error::dim("channels", kernel.c, input.c));
    }
    let oh = conv_output_size(input.h, kernel.h, stride, padding)?;
    let ow = conv_output_size(input.w, kernel.w, stride, padding)?;
    Ok(Geometry {
        c: input.c,
        h: input.h,
        w: input.w,
        kh: kernel.h,
        kw: kernel.w,
        stride,
        pad: padding,
        oh,
        ow,
    })
}

/// Cross-correlation of `input` (N,C,H,W) with `kernel` (F,C,Kh,Kw) plus per-filter `bias`.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (s, k) = (input.shape(), kernel.shape());
    let g = forward_geometry(s, k, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != k.n {
            return Err(Error::dim("bias", k.n, b.len()));
        }
    }
    let p = g.positions();
    let mut out = Tensor::zeros(Shape::new(s.n, k.n, g.oh, g.ow));
    let mut cols = vec![0.0; g.patch() * p];
    let per_in = s.c * s.plane();
    let per_out = k.n * p;
    for n in 0..s.n {
        im2col(&input.data()[n * per_in..(n + 1) * per_in], &g, &mut cols);
        let dst = &mut out.data_mut()[n * per_out..(n + 1) * per_out];
        gemm_nn(k.n, g.patch(), p, kernel.data(), &cols, dst);
        if let Some(b) = bias {
            for (f, &bf) in b.iter().enumerate() {
                for v in &mut dst[f * p..(f + 1) * p] {
                    *v += bf;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, kernel and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads> {
    let (s, k) = (input.shape(), kernel.shape());
    let g = forward_geometry(s, k, stride, padding)?;
    grad_out.expect_shape(Shape::new(s.n, k.n, g.oh, g.ow))?;
    let p = g.positions();
    let mut d_input = Tensor::zeros(s);
    let mut d_kernel = Tensor::zeros(k);
    let mut d_bias = vec![0.0; k.n];
    let mut cols = vec![0.0; g.patch() * p];
    let mut d_cols = vec![0.0; g.patch() * p];
    let per_in = s.c * s.plane();
    let per_out = k.n * p;
    for n in 0..s.n {
        let go = &grad_out.data()[n * per_out..(n + 1) * per_out];
        im2col(&input.data()[n * per_in..(n + 1) * per_in], &g, &mut cols);
        gemm_nt(k.n, p, g.patch(), go, &cols, d_kernel.data_mut());
        d_cols.iter_mut().for_each(|v| *v = 0.0);
        gemm_tn(g.patch(), k.n, p, kernel.data(), go, &mut d_cols);
        col2im(&d_cols, &g, &mut d_input.data_mut()[n * per_in..(n + 1) * per_in]);
        for (f, db) in d_bias.iter_mut().enumerate() {
            *db += go[f * p..(f + 1) * p].iter().sum::<f64>();
        }
    }
    Ok(ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    })
}

fn transpose_geometry(input: Shape, kernel: Shape, stride: usize) -> Result<Geometry> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if kernel.n != input.c {
        return Err(Error::dim("channels", kernel.n, input.c));
    }
    if kernel.h < stride || kernel.w < stride {
        warn!(
            "transpose convolution kernel {}x{} is smaller than stride {stride}; output will have gaps",
            kernel.h, kernel.w
        );
    }
    Ok(Geometry {
        c: kernel.c,
        h: (input.h - 1) * stride + kernel.h,
        w: (input.w - 1) * stride + kernel.w,
        kh: kernel.h,
        kw: kernel.w,
        stride,
        pad: 0,
        oh: input.h,
        ow: input.w,
    })
}

/// Transpose ("de-") convolution: the adjoint of the stride-`stride`,
/// zero-padding convolution whose kernel is `kernel` (Cin, Cout, Kh, Kw).
///
/// Output spatial size is `(H-1)*stride + Kh` by `(W-1)*stride + Kw`.
pub fn conv2d_transpose(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let (s, k) = (input.shape(), kernel.shape());
    let g = transpose_geometry(s, k, stride)?;
    let p = g.positions();
    let mut out = Tensor::zeros(Shape::new(s.n, k.c, g.h, g.w));
    let mut cols = vec![0.0; g.patch() * p];
    let per_in = s.c * p;
    let per_out = k.c * g.h * g.w;
    for n in 0..s.n {
        cols.iter_mut().for_each(|v| *v = 0.0);
        gemm_tn(g.patch(), k.n, p, kernel.data(), &input.data()[n * per_in..(n + 1) * per_in], &mut cols);
        col2im(&cols, &g, &mut out.data_mut()[n * per_out..(n + 1) * per_out]);
    }
    Ok(out)
}

/// Returns `(d_input, d_kernel)` for [`conv2d_transpose`].
pub fn conv2d_transpose_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor)> {
    let (s, k) = (input.shape(), kernel.shape());
    let g = transpose_geometry(s, k, stride)?;
    grad_out.expect_shape(Shape::new(s.n, k.c, g.h, g.w))?;
    let d_input = conv2d_forward(grad_out, kernel, None, stride, 0)?;
    let p = g.positions();
    let mut d_kernel = Tensor::zeros(k);
    let mut cols = vec![0.0; g.patch() * p];
    let per_in = s.c * p;
    let per_out = k.c * g.h * g.w;
    for n in 0..s.n {
        im2col(&grad_out.data()[n * per_out..(n + 1) * per_out], &g, &mut cols);
        gemm_nt(k.n, p, g.patch(), &input.data()[n * per_in..(n + 1) * per_in], &cols, d_kernel.data_mut());
    }
    Ok((d_input, d_kernel))
}

/// Channel-diagonal bilinear upsampling kernel of shape (channels, channels, size, size).
///
/// The 1-D factor is the tent `1 - |i - center| / factor` with
/// `factor = ceil(size / 2)`.
pub fn bilinear_kernel(size: usize, channels: usize) -> Result<Tensor> {
    if size < 2 {
        return Err(Error::Config(format!("bilinear kernel size must be >= 2, got {size}")));
    }
    if channels == 0 {
        return Err(Error::Config("bilinear kernel needs at least one channel".into()));
    }
    let factor = size.div_ceil(2) as f64;
    let center = if size % 2 == 1 { factor - 1.0 } else { factor - 0.5 };
    let tent: Vec<f64> = (0..size).map(|i| 1.0 - (i as f64 - center).abs() / factor).collect();
    Ok(Tensor::from_fn(Shape::new(channels, channels, size, size), |o, i, r, c| {
        if o == i {
            tent[r] * tent[c]
        } else {
            0.0
        }
    }))
}

/// Explicit sparse matrix of a zero-padded convolution: `vec(out) = C · vec(in)`.
///
/// Rows index output elements in (filter, row, col) order; columns index
/// input elements in (channel, row, col) order.
#[derive(Debug, Clone)]
pub struct ConvMatrix {
    rows: usize,
    cols: usize,
    out_h: usize,
    out_w: usize,
    entries: Vec<Vec<(usize, f64)>>,
}

impl ConvMatrix {
    pub fn new(kernel: &Tensor, in_h: usize, in_w: usize, stride: usize, padding: usize) -> Result<Self> {
        let k = kernel.shape();
        let out_h = conv_output_size(in_h, k.h, stride, padding)?;
        let out_w = conv_output_size(in_w, k.w, stride, padding)?;
        let rows = k.n * out_h * out_w;
        let cols = k.c * in_h * in_w;
        let mut entries = Vec::with_capacity(rows);
        for f in 0..k.n {
            for oi in 0..out_h {
                for oj in 0..out_w {
                    let mut row = Vec::with_capacity(k.c * k.h * k.w);
                    for c in 0..k.c {
                        for ki in 0..k.h {
                            for kj in 0..k.w {
                                let ii = (oi * stride + ki) as isize - padding as isize;
                                let jj = (oj * stride + kj) as isize - padding as isize;
                                if ii < 0 || jj < 0 || ii as usize >= in_h || jj as usize >= in_w {
                                    continue;
                                }
                                let col = (c * in_h + ii as usize) * in_w + jj as usize;
                                row.push((col, kernel.get(f, c, ki, kj)));
                            }
                        }
                    }
                    entries.push(row);
                }
            }
        }
        Ok(ConvMatrix {
            rows,
            cols,
            out_h,
            out_w,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Structural nonzeros in `row` (taps that land inside the input).
    pub fn row_nnz(&self, row: usize) -> usize {
        self.entries[row].len()
    }

    pub fn multiply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim("matrix columns", self.cols, x.len()));
        }
        Ok(self
            .entries
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect())
    }

    pub fn multiply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::dim("matrix rows", self.rows, y.len()));
        }
        let mut x = vec![0.0; self.cols];
        for (row, &yi) in self.entries.iter().zip(y) {
            for &(j, v) in row {
                x[j] += v * yi;
            }
        }
        Ok(x)
    }
}

/// Sparse matrix of the unpadded stride-`stride` convolution of an
/// `input_hw = (rows, cols)` map with `kernel`.
pub fn conv2d_as_matrix(kernel: &Tensor, input_hw: (usize, usize), stride: usize) -> Result<ConvMatrix> {
    ConvMatrix::new(kernel, input_hw.0, input_hw.1, stride, 0)
}
