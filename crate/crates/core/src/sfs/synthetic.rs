//! Analytic ray-depth surfaces for exercising the solver.

use serde::{Deserialize, Serialize};

use super::{CameraModel, ImagePoint};
use crate::raster::Field;

/// Ray depth `d(x, y)` over normalized image coordinates, with its exact gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSurface {
    Plane { depth: f64 },
    TiltedPlane { base: f64, slope: [f64; 2] },
    /// Spherical-profile dome `base - height * sqrt(1 - r^2 / radius^2)`
    /// bulging toward the camera.
    Hemisphere { base: f64, height: f64, radius: f64 },
    Sinusoid { base: f64, amplitude: f64, frequency: f64 },
}

impl SyntheticSurface {
    pub fn depth(&self, p: ImagePoint) -> f64 {
        match *self {
            SyntheticSurface::Plane { depth } => depth,
            SyntheticSurface::TiltedPlane { base, slope } => base + slope[0] * p.x + slope[1] * p.y,
            SyntheticSurface::Hemisphere { base, height, radius } => {
                let s = (1.0 - (p.x * p.x + p.y * p.y) / (radius * radius)).max(0.0);
                base - height * s.sqrt()
            }
            SyntheticSurface::Sinusoid {
                base,
                amplitude,
                frequency,
            } => base + amplitude * (frequency * p.x).sin() * (frequency * p.y).sin(),
        }
    }

    pub fn gradient(&self, p: ImagePoint) -> [f64; 2] {
        match *self {
            SyntheticSurface::Plane { .. } => [0.0, 0.0],
            SyntheticSurface::TiltedPlane { slope, .. } => slope,
            SyntheticSurface::Hemisphere { height, radius, .. } => {
                let r2 = radius * radius;
                let s = 1.0 - (p.x * p.x + p.y * p.y) / r2;
                if s <= 0.0 {
                    return [0.0, 0.0];
                }
                let k = height / (r2 * s.sqrt());
                [k * p.x, k * p.y]
            }
            SyntheticSurface::Sinusoid {
                amplitude,
                frequency,
                ..
            } => {
                let (sx, cx) = (frequency * p.x).sin_cos();
                let (sy, cy) = (frequency * p.y).sin_cos();
                [amplitude * frequency * cx * sy, amplitude * frequency * sx * cy]
            }
        }
    }

    /// Depth sampled at every pixel of a `rows` x `cols` image seen through `cam`.
    pub fn sample(&self, rows: usize, cols: usize, cam: &CameraModel) -> Field {
        Field::from_fn(rows, cols, |i, j| self.depth(cam.image_point(i, j)))
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticSurface::Plane { .. } => "plane",
            SyntheticSurface::TiltedPlane { .. } => "tilted-plane",
            SyntheticSurface::Hemisphere { .. } => "hemisphere",
            SyntheticSurface::Sinusoid { .. } => "sinusoid",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences() {
        let surfaces = [
            SyntheticSurface::TiltedPlane {
                base: 1.0,
                slope: [0.3, -0.2],
            },
            SyntheticSurface::Hemisphere {
                base: 2.0,
                height: 0.5,
                radius: 1.0,
            },
            SyntheticSurface::Sinusoid {
                base: 1.5,
                amplitude: 0.1,
                frequency: 7.0,
            },
        ];
        let h = 1e-6;
        for s in surfaces {
            for &(x, y) in &[(0.1, 0.2), (-0.3, 0.05), (0.4, -0.4)] {
                let g = s.gradient(ImagePoint::new(x, y));
                let gx = (s.depth(ImagePoint::new(x + h, y)) - s.depth(ImagePoint::new(x - h, y))) / (2.0 * h);
                let gy = (s.depth(ImagePoint::new(x, y + h)) - s.depth(ImagePoint::new(x, y - h))) / (2.0 * h);
                assert!((g[0] - gx).abs() < 1e-7 && (g[1] - gy).abs() < 1e-7, "{}", s.name());
            }
        }
    }
}
