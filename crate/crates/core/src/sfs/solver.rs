//! Lax–Friedrichs fast sweeping for the near-light shading equation.
//!
//! Each grid value is updated in place (Gauss–Seidel) from the Lax–Friedrichs
//! numerical Hamiltonian
//!
//! ```text
//! F(p, q, v) - sx * (vE - 2v + vW) / 2h - sy * (vS - 2v + vN) / 2h = 0
//! F(p, q, v) = (I / rho) * H(x, p, q) - exp(-2v)
//! ```
//!
//! with `p, q` the central differences of the neighbors. The local equation
//! is strictly increasing in `v`, so it has a single root, found by Newton.

use serde::{Deserialize, Serialize};

use super::{estimate_albedo, hamiltonian, q_term, CameraModel, LogDepthField, SPECULAR_THRESHOLD};
use crate::error::{Error, Result};
use crate::raster::Field;

/// Where the albedo comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlbedoSource {
    Fixed { value: f64 },
    /// Brightest diffuse region is assumed to sit at `reference_depth`.
    Estimate { reference_depth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Boundary {
    /// Border pixels held at `value`. `None` holds them at the zero-gradient
    /// solution of their own intensity, which is the initial guess.
    Fixed { value: Option<f64> },
    /// Border pixels solved with linearly extrapolated ghost neighbors.
    Outflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfsConfig {
    pub albedo: AlbedoSource,
    /// Maximum number of sweep groups (4 orderings each).
    pub max_sweeps: usize,
    /// Convergence threshold on the max absolute scheme residual.
    pub tolerance: f64,
    pub boundary: Boundary,
    /// `(sx, sy)`; `None` uses the analytic bound on |dF/dp|, |dF/dq|.
    pub viscosity: Option<[f64; 2]>,
    /// Pixels at or below this intensity carry no shading information.
    pub dark_threshold: f64,
    pub specular_threshold: f64,
}

impl Default for SfsConfig {
    fn default() -> Self {
        SfsConfig {
            albedo: AlbedoSource::Estimate { reference_depth: 1.0 },
            max_sweeps: 1000,
            tolerance: 1e-4,
            boundary: Boundary::Fixed { value: None },
            viscosity: None,
            dark_threshold: 1e-6,
            specular_threshold: SPECULAR_THRESHOLD,
        }
    }
}

impl SfsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        match self.albedo {
            AlbedoSource::Fixed { value } if !(value > 0.0) => {
                Err(Error::Config(format!("albedo must be positive, got {value}")))
            }
            AlbedoSource::Estimate { reference_depth } if !(reference_depth > 0.0) => {
                Err(Error::Config("reference depth must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfsReport {
    pub converged: bool,
    /// No pixel carried usable shading (all dark or saturated).
    pub degenerate: bool,
    pub residual: f64,
    pub sweeps: usize,
    /// Max residual after each sweep group.
    pub history: Vec<f64>,
    pub albedo: f64,
    pub masked_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfsResult {
    pub log_depth: LogDepthField,
    pub report: SfsReport,
}

struct Grid {
    rows: usize,
    cols: usize,
    h: f64,
    /// `I / rho` per pixel.
    shading: Vec<f64>,
    /// Normalized coordinates `(x + a, y + b)` and `Q^(3/2)` per pixel.
    coords: Vec<[f64; 2]>,
    q32: Vec<f64>,
    fc: f64,
    valid: Vec<bool>,
    fixed: Vec<bool>,
    sigma: [f64; 2],
}

impl Grid {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    /// Neighbor values `(west, east, north, south)`, with ghosts mirrored
    /// linearly through the center on the border.
    #[inline]
    fn neighbors(&self, v: &[f64], i: usize, j: usize, center: f64) -> [f64; 4] {
        let west = if j > 0 { Some(v[self.idx(i, j - 1)]) } else { None };
        let east = if j + 1 < self.cols { Some(v[self.idx(i, j + 1)]) } else { None };
        let north = if i > 0 { Some(v[self.idx(i - 1, j)]) } else { None };
        let south = if i + 1 < self.rows { Some(v[self.idx(i + 1, j)]) } else { None };
        let pair = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, 2.0 * center - a),
            (None, Some(b)) => (2.0 * center - b, b),
            (None, None) => (center, center),
        };
        let (w, e) = pair(west, east);
        let (n, s) = pair(north, south);
        [w, e, n, s]
    }

    /// Local scheme residual at `(i, j)` for trial value `x`, with `center`
    /// the value used for border ghosts. Returns `(G, dG/dx)`.
    #[inline]
    fn local(&self, k: usize, nb: [f64; 4], x: f64) -> (f64, f64) {
        let [w, e, n, s] = nb;
        let h = self.h;
        let p = (e - w) / (2.0 * h);
        let q = (s - n) / (2.0 * h);
        let [xa, yb] = self.coords[k];
        let j = (xa * p + yb * q + 1.0) / self.fc;
        let ham = (p * p + q * q + j * j).sqrt() * self.q32[k];
        let src = (-2.0 * x).exp();
        let g = self.shading[k] * ham
            - src
            - self.sigma[0] * (e + w - 2.0 * x) / (2.0 * h)
            - self.sigma[1] * (n + s - 2.0 * x) / (2.0 * h);
        let dg = 2.0 * src + (self.sigma[0] + self.sigma[1]) / h;
        (g, dg)
    }

    fn update(&self, v: &mut [f64], i: usize, j: usize) {
        let k = self.idx(i, j);
        if self.fixed[k] {
            return;
        }
        if !self.valid[k] {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            if j > 0 {
                acc += v[k - 1];
                cnt += 1.0;
            }
            if j + 1 < self.cols {
                acc += v[k + 1];
                cnt += 1.0;
            }
            if i > 0 {
                acc += v[k - self.cols];
                cnt += 1.0;
            }
            if i + 1 < self.rows {
                acc += v[k + self.cols];
                cnt += 1.0;
            }
            if cnt > 0.0 {
                v[k] = acc / cnt;
            }
            return;
        }
        let nb = self.neighbors(v, i, j, v[k]);
        let mut x = v[k];
        for _ in 0..50 {
            let (g, dg) = self.local(k, nb, x);
            let step = g / dg;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        v[k] = x;
    }

    fn residual(&self, v: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let k = self.idx(i, j);
                if self.fixed[k] || !self.valid[k] {
                    continue;
                }
                let nb = self.neighbors(v, i, j, v[k]);
                worst = worst.max(self.local(k, nb, v[k]).0.abs());
            }
        }
        worst
    }

    fn sweep(&self, v: &mut [f64], rev_rows: bool, rev_cols: bool) {
        for ii in 0..self.rows {
            let i = if rev_rows { self.rows - 1 - ii } else { ii };
            for jj in 0..self.cols {
                let j = if rev_cols { self.cols - 1 - jj } else { jj };
                self.update(v, i, j);
            }
        }
    }
}

/// Recovers log-depth from a grayscale intensity image in `[0, 1]`.
///
/// Saturated (specular) and black pixels are excluded from the equation and
/// filled by neighbor averaging. Non-convergence is reported in the result,
/// never as an error.
pub fn lax_friedrichs_solve(image: &Field, cam: &CameraModel, config: &SfsConfig) -> Result<SfsResult> {
    config.validate()?;
    if image.rows == 0 || image.cols == 0 {
        return Err(Error::Validation("empty image".into()));
    }
    if let Some(bad) = image.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Validation(format!("intensity {bad} outside [0, 1]")));
    }
    let pde = cam.normalized();
    let fc = pde.focal + pde.light_offset[2];
    if fc == 0.0 {
        return Err(Error::Geometry("f + c must be nonzero".into()));
    }
    let (rows, cols) = (image.rows, image.cols);
    let n = rows * cols;
    let valid: Vec<bool> = image
        .data
        .iter()
        .map(|&v| v > config.dark_threshold && v < config.specular_threshold)
        .collect();
    let masked = valid.iter().filter(|&&b| !b).count();

    if masked == n {
        let report = SfsReport {
            converged: false,
            degenerate: true,
            residual: f64::INFINITY,
            sweeps: 0,
            history: Vec::new(),
            albedo: f64::NAN,
            masked_pixels: masked,
        };
        return Ok(SfsResult {
            log_depth: LogDepthField {
                values: Field::filled(rows, cols, 0.0),
                spacing: cam.spacing(),
            },
            report,
        });
    }

    let albedo = match config.albedo {
        AlbedoSource::Fixed { value } => value,
        AlbedoSource::Estimate { reference_depth } => estimate_albedo(image, None, reference_depth)?,
    };

    let [a, b, _] = pde.light_offset;
    let mut coords = Vec::with_capacity(n);
    let mut q32 = Vec::with_capacity(n);
    for i in 0..rows {
        for j in 0..cols {
            let p = cam.image_point(i, j);
            let q = q_term(p, &pde);
            coords.push([p.x + a, p.y + b]);
            q32.push(q * q.sqrt());
        }
    }
    let shading: Vec<f64> = image.data.iter().map(|&v| v / albedo).collect();

    // |dF/dp| <= (I/rho) Q^(3/2) sqrt(1 + ((x+a)/(f+c))^2), likewise for q.
    let sigma = config.viscosity.unwrap_or_else(|| {
        let mut s = [0.0f64; 2];
        for k in 0..n {
            if !valid[k] {
                continue;
            }
            let base = shading[k] * q32[k];
            s[0] = s[0].max(base * (1.0 + (coords[k][0] / fc).powi(2)).sqrt());
            s[1] = s[1].max(base * (1.0 + (coords[k][1] / fc).powi(2)).sqrt());
        }
        s
    });

    // Zero-gradient solution as the initial guess.
    let mut v = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..n {
        if valid[k] {
            let h0 = hamiltonian(cam.image_point(k / cols, k % cols), [0.0, 0.0], &pde)?;
            v[k] = -0.5 * (shading[k] * h0).ln();
            acc += v[k];
        }
    }
    let mean = acc / (n - masked) as f64;
    for k in 0..n {
        if !valid[k] {
            v[k] = mean;
        }
    }

    let border = |k: usize| {
        let (i, j) = (k / cols, k % cols);
        i == 0 || j == 0 || i + 1 == rows || j + 1 == cols
    };
    let fixed: Vec<bool> = match config.boundary {
        Boundary::Fixed { value } => (0..n)
            .map(|k| {
                if border(k) {
                    if let Some(val) = value {
                        v[k] = val;
                    }
                    true
                } else {
                    false
                }
            })
            .collect(),
        Boundary::Outflow => vec![false; n],
    };

    let grid = Grid {
        rows,
        cols,
        h: cam.spacing(),
        shading,
        coords,
        q32,
        fc,
        valid,
        fixed,
        sigma,
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for _ in 0..config.max_sweeps {
        grid.sweep(&mut v, false, false);
        grid.sweep(&mut v, true, false);
        grid.sweep(&mut v, true, true);
        grid.sweep(&mut v, false, true);
        residual = grid.residual(&v);
        history.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual < config.tolerance {
            converged = true;
            break;
        }
    }
    inpaint(&grid, &mut v);

    Ok(SfsResult {
        log_depth: LogDepthField {
            values: Field::new(rows, cols, v)?,
            spacing: grid.h,
        },
        report: SfsReport {
            converged,
            degenerate: false,
            residual,
            sweeps: history.len(),
            history,
            albedo,
            masked_pixels: masked,
        },
    })
}

/// Relaxes masked pixels to the average of their neighbors until they settle.
fn inpaint(grid: &Grid, v: &mut [f64]) {
    if grid.valid.iter().all(|&b| b) {
        return;
    }
    for _ in 0..10_000 {
        let mut change: f64 = 0.0;
        for i in 0..grid.rows {
            for j in 0..grid.cols {
                let k = grid.idx(i, j);
                if grid.valid[k] {
                    continue;
                }
                let before = v[k];
                grid.update(v, i, j);
                change = change.max((v[k] - before).abs());
            }
        }
        if change < 1e-12 {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfs::{render_lambertian, SyntheticSurface};

    fn solve_surface(surface: SyntheticSurface, size: usize) -> (Field, SfsResult) {
        let cam = CameraModel::centered(size, size, size as f64, [0.0; 3]).unwrap();
        let depth = surface.sample(size, size, &cam);
        let img = render_lambertian(&depth, &cam, 1.0).unwrap();
        let cfg = SfsConfig {
            albedo: AlbedoSource::Fixed { value: 1.0 },
            ..Default::default()
        };
        (depth, lax_friedrichs_solve(&img, &cam, &cfg).unwrap())
    }

    #[test]
    fn plane_under_centered_light_is_recovered() {
        let (_, res) = solve_surface(SyntheticSurface::Plane { depth: 1.6 }, 33);
        assert!(res.report.converged);
        let d = res.log_depth.depth();
        for i in 4..29 {
            for j in 4..29 {
                assert!((d.get(i, j) / 1.6 - 1.0).abs() < 0.02);
            }
        }
    }

    #[test]
    fn all_black_image_is_degenerate() {
        let cam = CameraModel::centered(8, 8, 8.0, [0.0; 3]).unwrap();
        let res = lax_friedrichs_solve(&Field::filled(8, 8, 0.0), &cam, &SfsConfig::default()).unwrap();
        assert!(res.report.degenerate && !res.report.converged);
        assert!(res.log_depth.values.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn specular_pixels_are_inpainted() {
        let size = 25;
        let cam = CameraModel::centered(size, size, size as f64, [0.0; 3]).unwrap();
        let depth = Field::filled(size, size, 1.0);
        let mut img = render_lambertian(&depth, &cam, 0.9).unwrap();
        img.set(12, 12, 1.0);
        let cfg = SfsConfig {
            albedo: AlbedoSource::Fixed { value: 0.9 },
            ..Default::default()
        };
        let res = lax_friedrichs_solve(&img, &cam, &cfg).unwrap();
        assert_eq!(res.report.masked_pixels, 1);
        let v = &res.log_depth.values;
        let around = (v.get(11, 12) + v.get(13, 12) + v.get(12, 11) + v.get(12, 13)) / 4.0;
        assert!((v.get(12, 12) - around).abs() < 1e-9);
    }

    #[test]
    fn invalid_configuration_is_rejected() {
        let cam = CameraModel::centered(4, 4, 4.0, [0.0; 3]).unwrap();
        let img = Field::filled(4, 4, 0.5);
        let cfg = SfsConfig {
            max_sweeps: 0,
            ..Default::default()
        };
        assert!(matches!(lax_friedrichs_solve(&img, &cam, &cfg), Err(Error::Config(_))));
    }
}
