//! Dense 4-axis tensors and the hand-written differentiable layer kernels.
//!
//! Every kernel is a pure function of its inputs. Backward passes are written
//! out per layer; there is no tape.

mod batchnorm;
mod conv;
mod gemm;
mod gradcheck;
mod loss;
mod optim;
mod pool;

pub use batchnorm::{batchnorm, batchnorm_backward, BatchNormCache, BatchNormState, BnMode};
pub use conv::{
    bilinear_kernel, conv2d_as_matrix, conv2d_backward, conv2d_forward, conv2d_transpose,
    conv2d_transpose_backward, conv_output_size, ConvGrads, ConvMatrix,
};
pub use gradcheck::{grad_check, grad_check_fn, grad_check_fn_smooth, CheckOptions, Differentiable, SmoothCheck};
pub use loss::{softmax_xent, LabelMap, LossNorm, IGNORE};
pub use optim::{sgd_momentum_step, OptimizerState};
pub use pool::{maxpool, maxpool_backward, relu, relu_backward, MaxPoolIndices};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a [`Tensor`]: batch, channels, rows, cols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        for (axis, v) in [("batch", self.n), ("channels", self.c), ("rows", self.h), ("cols", self.w)] {
            if v == 0 {
                return Err(Error::Config(format!("tensor axis {axis} must be >= 1")));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major (N, C, H, W) array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(shape.validate().is_ok(), "invalid tensor shape {shape}");
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`, which must hold exactly `n*c*h*w` values.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::dim("data length", shape.len(), data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor::zeros(shape);
        let mut i = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        t.data[i] = f(n, c, h, w);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.shape.n && c < self.shape.c && h < self.shape.h && w < self.shape.w);
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous H*W slice of one channel of one batch item.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Same elements under a new shape. Element counts must agree.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_shape(other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|x| x * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Errors naming the first axis that differs from `expected`.
    pub fn expect_shape(&self, expected: Shape) -> Result<()> {
        let pairs = [
            ("batch", expected.n, self.shape.n),
            ("channels", expected.c, self.shape.c),
            ("rows", expected.h, self.shape.h),
            ("cols", expected.w, self.shape.w),
        ];
        for (axis, e, a) in pairs {
            if e != a {
                return Err(Error::dim(axis, e, a));
            }
        }
        Ok(())
    }

    /// Rows `top..top+h`, cols `left..left+w` of every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        if top + h > self.shape.h {
            return Err(Error::dim("rows", self.shape.h, top + h));
        }
        if left + w > self.shape.w {
            return Err(Error::dim("cols", self.shape.w, left + w));
        }
        let s = self.shape;
        Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, i, j| {
            self.get(n, c, top + i, left + j)
        }))
    }

    /// Adjoint of [`Tensor::crop`]: embeds `self` into a zero tensor of `full` spatial size.
    pub fn uncrop(&self, top: usize, left: usize, full_h: usize, full_w: usize) -> Tensor {
        let s = self.shape;
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, full_h, full_w));
        for n in 0..s.n {
            for c in 0..s.c {
                for i in 0..s.h {
                    for j in 0..s.w {
                        out.set(n, c, top + i, left + j, self.get(n, c, i, j));
                    }
                }
            }
        }
        out
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Validation("cannot stack an empty list".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        for t in items {
            t.expect_shape(Shape::new(t.shape.n, s.c, s.h, s.w))?;
            data.extend_from_slice(&t.data);
        }
        let n = data.len() / (s.c * s.h * s.w);
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape, b.shape);
        b.expect_shape(Shape::new(sa.n, sb.c, sa.h, sa.w))?;
        let c = sa.c + sb.c;
        let mut data = Vec::with_capacity(sa.n * c * sa.plane());
        for n in 0..sa.n {
            for ch in 0..sa.c {
                data.extend_from_slice(a.plane(n, ch));
            }
            for ch in 0..sb.c {
                data.extend_from_slice(b.plane(n, ch));
            }
        }
        Tensor::from_vec(Shape::new(sa.n, c, sa.h, sa.w), data)
    }

    /// Single batch item `n` as an N=1 tensor.
    pub fn item(&self, n: usize) -> Tensor {
        let s = self.shape;
        let per = s.c * s.plane();
        Tensor {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let s = Shape::new(1, 2, 3, 4);
        assert!(Tensor::from_vec(s, vec![0.0; 24]).is_ok());
        assert!(matches!(
            Tensor::from_vec(s, vec![0.0; 23]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor::from_vec(Shape::new(0, 1, 1, 1), vec![]).is_err());
    }

    #[test]
    fn reshape_preserves_elements() {
        let t = Tensor::from_fn(Shape::new(1, 2, 2, 3), |_, c, h, w| (c * 6 + h * 3 + w) as f64);
        let r = t.reshape(Shape::new(1, 1, 3, 4)).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(Shape::new(1, 1, 5, 5)).is_err());
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let a = Tensor::zeros(Shape::new(1, 2, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 3, 3, 3));
        match a.add(&b) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "channels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crop_and_uncrop_are_adjoint() {
        let t = Tensor::from_fn(Shape::new(1, 1, 5, 6), |_, _, h, w| (h * 10 + w) as f64);
        let c = t.crop(1, 2, 3, 3).unwrap();
        assert_eq!(c.get(0, 0, 0, 0), 12.0);
        let g = Tensor::from_fn(c.shape(), |_, _, h, w| (h + w) as f64 + 0.5);
        let lhs = c.dot(&g).unwrap();
        let rhs = t.dot(&g.uncrop(1, 2, 5, 6)).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn concat_puts_second_operand_last() {
        let a = Tensor::filled(Shape::new(2, 3, 2, 2), 1.0);
        let b = Tensor::filled(Shape::new(2, 1, 2, 2), 7.0);
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 4, 2, 2));
        assert!(c.plane(1, 3).iter().all(|&v| v == 7.0));
        assert!(c.plane(1, 2).iter().all(|&v| v == 1.0));
    }
}
