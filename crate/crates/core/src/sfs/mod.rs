//! Near-light shape-from-shading.
//!
//! The surface is parameterized along rays leaving the light source: the
//! point seen at normalized image position `x = (x, y)` sits at
//! `d(x) * (x + a, y + b, f + c)` relative to the light, where `(a, b, c)` is
//! the light's offset from the optical center. With `v = ln d` a Lambertian
//! surface with albedo `rho` satisfies
//!
//! ```text
//! (I(x) / rho) * sqrt(v_x^2 + v_y^2 + J(x, grad v)^2) * Q(x)^(3/2) = exp(-2 v)
//! Q(x)          = (x + a)^2 + (y + b)^2 + (f + c)^2
//! J(x, grad v)  = ((x + a) v_x + (y + b) v_y + 1) / (f + c)
//! ```
//!
//! [`lax_friedrichs_solve`] recovers `v` from a single intensity image;
//! [`render_lambertian`] is the forward model used to verify it.

mod io;
mod solver;
mod synthetic;

pub use io::{read_intensity_image, write_depth_pgm, DepthSidecar};
pub use solver::{lax_friedrichs_solve, AlbedoSource, Boundary, SfsConfig, SfsReport, SfsResult};
pub use synthetic::SyntheticSurface;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Field, Mask};
use crate::tensor::{Shape, Tensor};

/// Pinhole camera with a point light displaced from the optical center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal: f64,
    /// Light position `(a, b, c)` relative to the optical center, in focal-length units.
    pub light_offset: [f64; 3],
    /// Principal point `(cx, cy)` in pixels (column, row).
    pub principal: [f64; 2],
}

impl CameraModel {
    pub fn new(focal: f64, light_offset: [f64; 3], principal: [f64; 2]) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::Geometry(format!("focal length must be positive, got {focal}")));
        }
        Ok(CameraModel {
            focal,
            light_offset,
            principal,
        })
    }

    /// Principal point at the center of a `rows` x `cols` image.
    pub fn centered(rows: usize, cols: usize, focal: f64, light_offset: [f64; 3]) -> Result<Self> {
        Self::new(
            focal,
            light_offset,
            [(cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0],
        )
    }

    /// Same light geometry expressed with unit focal length, where image
    /// coordinates and depth share units.
    pub fn normalized(&self) -> CameraModel {
        CameraModel {
            focal: 1.0,
            light_offset: self.light_offset,
            principal: [0.0, 0.0],
        }
    }

    /// Normalized image coordinates of pixel `(row, col)`.
    pub fn image_point(&self, row: usize, col: usize) -> ImagePoint {
        ImagePoint {
            x: (col as f64 - self.principal[0]) / self.focal,
            y: (row as f64 - self.principal[1]) / self.focal,
        }
    }

    /// Pixel pitch in normalized coordinates.
    pub fn spacing(&self) -> f64 {
        1.0 / self.focal
    }

    fn denominator(&self) -> Result<f64> {
        let fc = self.focal + self.light_offset[2];
        if fc == 0.0 {
            return Err(Error::Geometry("f + c must be nonzero".into()));
        }
        Ok(fc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        ImagePoint { x, y }
    }
}

/// Log-depth `v = ln d` over the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDepthField {
    pub values: Field,
    /// Grid spacing in normalized image coordinates.
    pub spacing: f64,
}

impl LogDepthField {
    pub fn depth(&self) -> Field {
        self.values.map(f64::exp)
    }
}

/// Squared distance term `(x + a)^2 + (y + b)^2 + (f + c)^2`.
pub fn q_term(p: ImagePoint, cam: &CameraModel) -> f64 {
    let [a, b, c] = cam.light_offset;
    (p.x + a).powi(2) + (p.y + b).powi(2) + (cam.focal + c).powi(2)
}

/// `((x + a) v_x + (y + b) v_y + 1) / (f + c)`.
pub fn j_term(p: ImagePoint, grad_v: [f64; 2], cam: &CameraModel) -> Result<f64> {
    let [a, b, _] = cam.light_offset;
    let fc = cam.denominator()?;
    Ok(((p.x + a) * grad_v[0] + (p.y + b) * grad_v[1] + 1.0) / fc)
}

/// Geometric factor `sqrt(v_x^2 + v_y^2 + J^2) * Q^(3/2)`.
pub fn hamiltonian(p: ImagePoint, grad_v: [f64; 2], cam: &CameraModel) -> Result<f64> {
    let j = j_term(p, grad_v, cam)?;
    let q = q_term(p, cam);
    Ok((grad_v[0] * grad_v[0] + grad_v[1] * grad_v[1] + j * j).sqrt() * q * q.sqrt())
}

/// `(I / rho) * H(x, grad v) - exp(-2 v)`; zero where `(v, grad v)` explains the intensity.
pub fn hamiltonian_residual(
    p: ImagePoint,
    v: f64,
    grad_v: [f64; 2],
    intensity: f64,
    cam: &CameraModel,
    albedo: f64,
) -> Result<f64> {
    if intensity < 0.0 {
        return Err(Error::Validation(format!("negative intensity {intensity}")));
    }
    Ok(intensity / albedo * hamiltonian(p, grad_v, cam)? - (-2.0 * v).exp())
}

/// Lambertian intensity of the surface patch at `p` with ray depth `depth`
/// and depth gradient `grad_depth` (with respect to normalized coordinates).
///
/// The normal comes from the tangent frame of `d * (x + a, y + b, f + c)`;
/// back-facing patches are clamped to zero.
pub fn lambertian_intensity(p: ImagePoint, depth: f64, grad_depth: [f64; 2], cam: &CameraModel, albedo: f64) -> f64 {
    let [a, b, c] = cam.light_offset;
    let ray = [p.x + a, p.y + b, cam.focal + c];
    let point = ray.map(|r| depth * r);
    let tx = [grad_depth[0] * ray[0] + depth, grad_depth[0] * ray[1], grad_depth[0] * ray[2]];
    let ty = [grad_depth[1] * ray[0], grad_depth[1] * ray[1] + depth, grad_depth[1] * ray[2]];
    let n = [
        tx[1] * ty[2] - tx[2] * ty[1],
        tx[2] * ty[0] - tx[0] * ty[2],
        tx[0] * ty[1] - tx[1] * ty[0],
    ];
    let r2: f64 = point.iter().map(|v| v * v).sum();
    let n_norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos = n.iter().zip(&point).map(|(a, b)| a * b).sum::<f64>() / (n_norm * r2.sqrt());
    albedo * cos.max(0.0) / r2
}

/// Renders a ray-depth map under the point light with inverse-square falloff.
/// Depth gradients use central differences (one-sided on the border).
pub fn render_lambertian(depth: &Field, cam: &CameraModel, albedo: f64) -> Result<Field> {
    if let Some(bad) = depth.data.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::Validation(format!("depth must be positive, found {bad}")));
    }
    let pde_cam = cam.normalized();
    let h = cam.spacing();
    let (rows, cols) = (depth.rows, depth.cols);
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / (span as f64 * h);
    Ok(Field::from_fn(rows, cols, |i, j| {
        let (jl, jr) = (j.saturating_sub(1), (j + 1).min(cols - 1));
        let (iu, id) = (i.saturating_sub(1), (i + 1).min(rows - 1));
        let gx = if cols > 1 { diff(depth.get(i, jl), depth.get(i, jr), jr - jl) } else { 0.0 };
        let gy = if rows > 1 { diff(depth.get(iu, j), depth.get(id, j), id - iu) } else { 0.0 };
        lambertian_intensity(cam.image_point(i, j), depth.get(i, j), [gx, gy], &pde_cam, albedo)
    }))
}

/// Intensity at or above which a pixel is treated as specular.
pub const SPECULAR_THRESHOLD: f64 = 0.98;

/// Albedo that maps the brightest diffuse region to `reference_depth`
/// under `I = rho / d^2`.
///
/// The region is `highlight` minus saturated pixels when that is non-empty,
/// otherwise the diffuse pixels at or above the 99th intensity percentile.
pub fn estimate_albedo(image: &Field, highlight: Option<&Mask>, reference_depth: f64) -> Result<f64> {
    if !(reference_depth > 0.0) {
        return Err(Error::Albedo(format!("reference depth must be positive, got {reference_depth}")));
    }
    let diffuse = |v: f64| v < SPECULAR_THRESHOLD;
    let mut region: Vec<f64> = Vec::new();
    if let Some(mask) = highlight {
        if mask.rows != image.rows || mask.cols != image.cols {
            return Err(Error::dim("highlight mask rows", image.rows, mask.rows));
        }
        region = (0..image.rows)
            .flat_map(|i| (0..image.cols).map(move |j| (i, j)))
            .filter(|&(i, j)| mask.get(i, j))
            .map(|(i, j)| image.get(i, j))
            .filter(|&v| diffuse(v))
            .collect();
    }
    if region.is_empty() {
        let mut values: Vec<f64> = image.data.iter().copied().filter(|&v| diffuse(v)).collect();
        if values.is_empty() {
            return Err(Error::Albedo("every pixel is saturated".into()));
        }
        values.sort_by(f64::total_cmp);
        let cut = values[((values.len() - 1) as f64 * 0.99).round() as usize];
        region = values.into_iter().filter(|&v| v >= cut).collect();
    }
    let mean = region.iter().sum::<f64>() / region.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Albedo("highlight region is black".into()));
    }
    Ok(mean * reference_depth * reference_depth)
}

/// Min-max normalizes a log-depth field into a (1, 1, H, W) tensor in `[0, 1]`.
/// A constant field maps to 0.5.
pub fn depth_to_channel(v: &LogDepthField) -> Tensor {
    let f = &v.values;
    let (lo, hi) = f.min_max();
    let span = hi - lo;
    let data = if span > 0.0 && span.is_finite() {
        f.data.iter().map(|&x| ((x - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.5; f.data.len()]
    };
    Tensor::from_vec(Shape::new(1, 1, f.rows, f.cols), data).expect("field dims are positive")
}
