//! Image/mask ingestion, augmentation and batch assembly.

mod io;
mod synth;

pub use io::{
    filter_polyp_frames, load_dataset, load_sample, read_manifest, write_manifest, write_sample, DatasetManifest,
    Layout, Record, SkipEntry,
};
pub use synth::{synth_dataset, SynthConfig, SynthKind};

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::connected_components;
use crate::raster::Mask;
use crate::tensor::{LabelMap, Shape, Tensor};

/// One image with its polyp annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// 1 x 3 x H x W, values in `[0, 1]`.
    pub image: Tensor,
    /// One mask per polyp, pairwise disjoint.
    pub masks: Vec<Mask>,
    pub union: Mask,
    /// 1 x 1 x H x W normalized depth.
    pub depth: Option<Tensor>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, masks: Vec<Mask>, depth: Option<Tensor>) -> Result<Self> {
        let id = id.into();
        let s = image.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::Validation(format!("{id}: image must be 1x3xHxW, got {s}")));
        }
        let mut union = Mask::empty(s.h, s.w);
        for m in &masks {
            if m.rows != s.h || m.cols != s.w {
                return Err(Error::Validation(format!(
                    "{id}: mask {}x{} does not match image {}x{}",
                    m.rows, m.cols, s.h, s.w
                )));
            }
            union = union.union(m)?;
        }
        if let Some(d) = &depth {
            d.expect_shape(Shape::new(1, 1, s.h, s.w))?;
        }
        Ok(Sample {
            id,
            image,
            masks,
            union,
            depth,
        })
    }

    /// Builds per-polyp masks by splitting a union mask into connected components.
    pub fn from_union(id: impl Into<String>, image: Tensor, union: &Mask, depth: Option<Tensor>) -> Result<Self> {
        let masks = connected_components(union)
            .iter()
            .map(|b| b.to_mask(union.rows, union.cols))
            .collect();
        Sample::new(id, image, masks, depth)
    }

    pub fn rows(&self) -> usize {
        self.image.shape().h
    }

    pub fn cols(&self) -> usize {
        self.image.shape().w
    }

    pub fn has_polyp(&self) -> bool {
        !self.union.is_empty()
    }

    /// Applies one spatial map to the image, every mask and depth.
    fn remap(&self, rows: usize, cols: usize, tensor: impl Fn(&Tensor) -> Tensor, mask: impl Fn(&Mask) -> Mask) -> Sample {
        let masks: Vec<Mask> = self.masks.iter().map(&mask).collect();
        let mut union = Mask::empty(rows, cols);
        for m in &masks {
            union = union.union(m).expect("remapped masks share dims");
        }
        Sample {
            id: self.id.clone(),
            image: tensor(&self.image),
            masks,
            union,
            depth: self.depth.as_ref().map(tensor),
        }
    }
}

/// Pixel-center source coordinate of destination index `dst`.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64)
}

fn resize_bilinear(t: &Tensor, rows: usize, cols: usize) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, rows, cols), |n, c, i, j| {
        let (y, x) = (source_coord(i, s.h, rows), source_coord(j, s.w, cols));
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = t.get(n, c, y0, x0) * (1.0 - fx) + t.get(n, c, y0, x1) * fx;
        let bottom = t.get(n, c, y1, x0) * (1.0 - fx) + t.get(n, c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn resize_nearest(m: &Mask, rows: usize, cols: usize) -> Mask {
    let pick = |dst: usize, src_len: usize, dst_len: usize| {
        (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
    };
    Mask::from_fn(rows, cols, |i, j| m.get(pick(i, m.rows, rows), pick(j, m.cols, cols)))
}

/// Bilinear for image and depth, nearest-neighbor for masks. Polyps that
/// vanish at the new size are dropped from the instance list.
pub fn resize_sample(sample: &Sample, rows: usize, cols: usize) -> Result<Sample> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("resize target must be at least 1x1".into()));
    }
    if (rows, cols) == (sample.rows(), sample.cols()) {
        return Ok(sample.clone());
    }
    let mut out = sample.remap(rows, cols, |t| resize_bilinear(t, rows, cols), |m| resize_nearest(m, rows, cols));
    out.masks.retain(|m| !m.is_empty());
    Ok(out)
}

pub fn flip_horizontal(sample: &Sample) -> Sample {
    let (rows, cols) = (sample.rows(), sample.cols());
    sample.remap(
        rows,
        cols,
        |t| Tensor::from_fn(t.shape(), |n, c, i, j| t.get(n, c, i, cols - 1 - j)),
        |m| Mask::from_fn(rows, cols, |i, j| m.get(i, cols - 1 - j)),
    )
}

pub fn flip_vertical(sample: &Sample) -> Sample {
    let (rows, cols) = (sample.rows(), sample.cols());
    sample.remap(
        rows,
        cols,
        |t| Tensor::from_fn(t.shape(), |n, c, i, j| t.get(n, c, rows - 1 - i, j)),
        |m| Mask::from_fn(rows, cols, |i, j| m.get(rows - 1 - i, j)),
    )
}

/// Horizontal flip with probability 1/2; with `vertical`, an independent
/// vertical flip with probability 1/2 as well.
pub fn random_flip(sample: &Sample, rng: &mut impl Rng, vertical: bool) -> Sample {
    let mut out = if rng.gen_bool(0.5) {
        flip_horizontal(sample)
    } else {
        sample.clone()
    };
    if vertical && rng.gen_bool(0.5) {
        out = flip_vertical(&out);
    }
    out
}

/// `rows` x `cols` crop at `(top, left)` of image, masks and depth.
pub fn crop_sample(sample: &Sample, top: usize, left: usize, rows: usize, cols: usize) -> Result<Sample> {
    if top + rows > sample.rows() || left + cols > sample.cols() {
        return Err(Error::Validation(format!(
            "{}: crop {rows}x{cols} at ({top}, {left}) exceeds {}x{}",
            sample.id,
            sample.rows(),
            sample.cols()
        )));
    }
    Ok(sample.remap(
        rows,
        cols,
        |t| t.crop(top, left, rows, cols).expect("bounds checked"),
        |m| Mask::from_fn(rows, cols, |i, j| m.get(top + i, left + j)),
    ))
}

/// Uniformly placed `size` x `size` patch. Polyps outside the patch are
/// dropped from the instance list.
pub fn sample_patch(sample: &Sample, size: usize, rng: &mut impl Rng) -> Result<Sample> {
    if size == 0 || sample.rows() < size || sample.cols() < size {
        return Err(Error::Validation(format!(
            "{}: {}x{} sample is smaller than a {size}x{size} patch",
            sample.id,
            sample.rows(),
            sample.cols()
        )));
    }
    let top = rng.gen_range(0..=sample.rows() - size);
    let left = rng.gen_range(0..=sample.cols() - size);
    let mut out = crop_sample(sample, top, left, size, size)?;
    out.masks.retain(|m| !m.is_empty());
    Ok(out)
}

/// Stacks samples into an input tensor (RGB, then depth when requested)
/// and the union-mask labels.
pub fn assemble_batch(samples: &[Sample], with_depth: bool) -> Result<(Tensor, LabelMap)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Validation("cannot assemble an empty batch".into()))?;
    let (h, w) = (first.rows(), first.cols());
    let mut items = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.rows(), s.cols()) != (h, w) {
            return Err(Error::Validation(format!(
                "{}: {}x{} differs from the batch size {h}x{w}",
                s.id,
                s.rows(),
                s.cols()
            )));
        }
        let item = if with_depth {
            let d = s
                .depth
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("{}: depth channel requested but missing", s.id)))?;
            Tensor::concat_channels(&s.image, d)?
        } else {
            s.image.clone()
        };
        items.push(item);
        labels.extend_from_slice(s.union.as_bytes());
    }
    Ok((Tensor::stack(&items)?, LabelMap::new(samples.len(), h, w, labels)?))
}
