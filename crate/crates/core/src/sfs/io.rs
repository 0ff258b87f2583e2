//! Depth-map export (16-bit PGM + text sidecar) and grayscale intensity input.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SfsReport;
use crate::error::{Error, Result};
use crate::raster::Field;

/// Plain-text companion of an exported depth map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub min_depth: f64,
    pub max_depth: f64,
    pub converged: bool,
    pub degenerate: bool,
    pub residual: f64,
    pub sweeps: usize,
    pub albedo: f64,
}

/// Writes `depth` as a binary 16-bit PGM, linearly mapping `[min, max]` to
/// `[0, 65535]`, plus `<path>.txt` holding the range and solver report.
pub fn write_depth_pgm(path: &Path, depth: &Field, report: &SfsReport) -> Result<DepthSidecar> {
    let (lo, hi) = depth.min_max();
    let span = hi - lo;
    let mut bytes = format!("P5\n{} {}\n65535\n", depth.cols, depth.rows).into_bytes();
    for &d in &depth.data {
        let level = if span > 0.0 { ((d - lo) / span * 65535.0).round() } else { 0.0 };
        bytes.extend_from_slice(&(level.clamp(0.0, 65535.0) as u16).to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let sidecar = DepthSidecar {
        min_depth: lo,
        max_depth: hi,
        converged: report.converged,
        degenerate: report.degenerate,
        residual: if report.residual.is_finite() { report.residual } else { -1.0 },
        sweeps: report.sweeps,
        albedo: if report.albedo.is_finite() { report.albedo } else { -1.0 },
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Validation(e.to_string()))?;
    let side_path = path.with_extension("pgm.txt");
    let mut f = fs::File::create(&side_path).map_err(|e| Error::io(&side_path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&side_path, e))?;
    Ok(sidecar)
}

/// Loads an 8/16-bit grayscale or RGB PNG/PNM as intensities in `[0, 1]`.
/// Color pixels become the mean of their channels.
pub fn read_intensity_image(path: &Path) -> Result<Field> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .pixels()
        .map(|p| ((p.0[0] + p.0[1] + p.0[2]) as f64 / 3.0).clamp(0.0, 1.0))
        .collect();
    Field::new(h as usize, w as usize, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> SfsReport {
        SfsReport {
            converged: true,
            degenerate: false,
            residual: 1e-5,
            sweeps: 12,
            history: vec![],
            albedo: 0.8,
            masked_pixels: 0,
        }
    }

    #[test]
    fn pgm_header_and_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let depth = Field::new(1, 3, vec![1.0, 1.5, 2.0]).unwrap();
        let side = write_depth_pgm(&path, &depth, &report()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        assert_eq!(body, &[0, 0, 0x80, 0x00, 0xff, 0xff]);
        assert_eq!((side.min_depth, side.max_depth), (1.0, 2.0));
        let text = fs::read_to_string(dir.path().join("d.pgm.txt")).unwrap();
        assert!(text.contains("converged = true"));
    }

    #[test]
    fn reads_back_16_bit_pgm_as_intensity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.pgm");
        let depth = Field::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        write_depth_pgm(&path, &depth, &report()).unwrap();
        let back = read_intensity_image(&path).unwrap();
        assert_eq!((back.rows, back.cols), (2, 2));
        for (a, b) in back.data.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn undecodable_file_names_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        fs::write(&path, b"not an image").unwrap();
        match read_intensity_image(&path) {
            Err(Error::Decode { path: p, .. }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }
}
