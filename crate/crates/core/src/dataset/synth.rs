//! Procedural colonoscopy-like frames with known polyp masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Every bright blob is a polyp.
    #[default]
    Plain,
    /// Polyps are mixed with decoy blobs of identical appearance; only the
    /// depth channel tells them apart.
    AmbiguousDepth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub size: usize,
    pub count: usize,
    pub seed: u64,
    pub max_polyps: usize,
    pub kind: SynthKind,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            count: 16,
            seed: 0,
            max_polyps: 2,
            kind: SynthKind::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    ci: f64,
    cj: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    polyp: bool,
}

impl Blob {
    /// Normalized elliptical radius; below 1 inside.
    fn radius(&self, i: f64, j: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (di, dj) = (i - self.ci, j - self.cj);
        let u = c * dj + s * di;
        let v = -s * dj + c * di;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }

    fn reach(&self) -> f64 {
        self.rx.max(self.ry)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn place_blobs(rng: &mut ChaCha8Rng, size: usize, want: usize) -> Vec<Blob> {
    let s = size as f64;
    let (rmin, rmax) = ((s / 12.0).max(2.0), (s / 6.0).max(3.0));
    let mut blobs: Vec<Blob> = Vec::new();
    for _ in 0..want * 50 {
        if blobs.len() == want {
            break;
        }
        let ry = rng.gen_range(rmin..rmax);
        let rx = rng.gen_range(rmin..rmax);
        let reach = rx.max(ry);
        if 2.0 * reach + 4.0 >= s {
            break;
        }
        let b = Blob {
            ci: rng.gen_range(reach + 2.0..s - reach - 2.0),
            cj: rng.gen_range(reach + 2.0..s - reach - 2.0),
            ry,
            rx,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            polyp: true,
        };
        let clear = blobs.iter().all(|o| {
            let d = ((o.ci - b.ci).powi(2) + (o.cj - b.cj).powi(2)).sqrt();
            d > o.reach() + b.reach() + 3.0
        });
        if clear {
            blobs.push(b);
        }
    }
    blobs
}

fn frame(rng: &mut ChaCha8Rng, cfg: &SynthConfig, index: usize) -> Result<Sample> {
    let size = cfg.size;
    let polyps = rng.gen_range(1..=cfg.max_polyps);
    let decoys = match cfg.kind {
        SynthKind::Plain => 0,
        SynthKind::AmbiguousDepth => polyps + rng.gen_range(0..=1),
    };
    let mut blobs = place_blobs(rng, size, polyps + decoys);
    if blobs.is_empty() {
        return Err(Error::Config(format!("image size {size} is too small for a polyp")));
    }
    // Decoys are chosen after placement so position carries no signal.
    let npolyp = polyps.min(blobs.len()).max(1);
    for (k, b) in blobs.iter_mut().enumerate() {
        b.polyp = k < npolyp;
    }

    let base = [
        rng.gen_range(0.50..0.65),
        rng.gen_range(0.22..0.32),
        rng.gen_range(0.18..0.26),
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let tilt = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let noise = Normal::new(0.0, 0.01).expect("valid normal");
    let s = size as f64;

    let mut image = Tensor::zeros(Shape::new(1, 3, size, size));
    let mut depth = Tensor::zeros(Shape::new(1, 1, size, size));
    let mut masks = vec![Mask::empty(size, size); npolyp];
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let texture: f64 = waves
                .iter()
                .map(|&(fy, fx, ph, a)| a * (std::f64::consts::TAU * (fy * y + fx * x) / s + ph).sin())
                .sum();
            let mut highlight = 0.0;
            let mut bump = 0.0;
            for (k, b) in blobs.iter().enumerate() {
                let r = b.radius(y, x);
                if r < 1.0 {
                    highlight += (1.0 - r * r).sqrt();
                    if b.polyp {
                        masks[k].set(i, j, true);
                    }
                }
                if b.polyp {
                    // Edge width of about one pixel.
                    bump += sigmoid((1.0 - r) * b.rx.min(b.ry) * 2.0);
                }
            }
            for c in 0..3 {
                let lift = [0.30, 0.28, 0.22][c];
                let v = base[c] + texture + lift * highlight + noise.sample(rng);
                image.set(0, c, i, j, v.clamp(0.0, 1.0));
            }
            let d = 0.3 + tilt.0 * (y / s - 0.5) + tilt.1 * (x / s - 0.5) + 0.5 * bump;
            depth.set(0, 0, i, j, d.clamp(0.0, 1.0));
        }
    }
    let id = format!("synth{}_{index:04}", cfg.seed);
    Sample::new(id, image, masks, Some(depth))
}

/// `cfg.count` frames from a generator seeded with `cfg.seed`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    if cfg.size < 16 {
        return Err(Error::Config(format!("synthetic image size must be >= 16, got {}", cfg.size)));
    }
    if cfg.max_polyps == 0 {
        return Err(Error::Config("max_polyps must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count).map(|k| frame(&mut rng, cfg, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::connected_components;

    #[test]
    fn same_seed_same_frames() {
        let cfg = SynthConfig {
            count: 3,
            ..Default::default()
        };
        assert_eq!(synth_dataset(&cfg).unwrap(), synth_dataset(&cfg).unwrap());
    }

    #[test]
    fn polyps_are_separate_components() {
        let cfg = SynthConfig {
            count: 20,
            max_polyps: 3,
            ..Default::default()
        };
        for s in synth_dataset(&cfg).unwrap() {
            assert!(s.has_polyp());
            assert_eq!(connected_components(&s.union).len(), s.masks.len(), "{}", s.id);
        }
    }

    #[test]
    fn depth_separates_polyps() {
        let cfg = SynthConfig {
            count: 10,
            kind: SynthKind::AmbiguousDepth,
            ..Default::default()
        };
        for s in synth_dataset(&cfg).unwrap() {
            let d = s.depth.as_ref().unwrap();
            let (mut inside, mut outside) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..s.rows() {
                for j in 0..s.cols() {
                    let v = d.get(0, 0, i, j);
                    if s.union.get(i, j) {
                        inside = inside.min(v);
                    } else {
                        outside = outside.max(v);
                    }
                }
            }
            assert!(inside > 0.3 && outside < 0.9, "{}: {inside} {outside}", s.id);
        }
    }
}
