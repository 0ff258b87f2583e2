use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use polypseg_core::sfs::{lax_friedrichs_solve, read_intensity_image, write_depth_pgm, DepthSidecar};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SfsItem {
    pub id: String,
    pub depth: PathBuf,
    pub sidecar: DepthSidecar,
}

fn image_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    if let Some(d) = &cfg.sfs.images {
        return Ok(d.clone());
    }
    match &cfg.data.root {
        Some(root) => Ok(root.join(&cfg.data.layout.images)),
        None => Err(CliError::Config("sfs needs sfs.images, data.root or --images".into())),
    }
}

fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(dir, e))?.path();
        let ext = p.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pgm" | "pnm")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// One depth map plus sidecar per image under `<output>/depth`, and a
/// `sfs_report.csv`. Solver non-convergence is reported, not fatal.
pub fn cmd_sfs(cfg: &RunConfig) -> CliResult<Vec<SfsItem>> {
    cfg.sfs.solver.validate()?;
    let files = list_images(&image_dir(cfg)?)?;
    if files.is_empty() {
        return Err(CliError::Data("no images found for sfs".into()));
    }
    cfg.echo()?;
    let out_dir = cfg.output.join("depth");
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let items = files
        .par_iter()
        .map(|path| {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            let field = read_intensity_image(path)?;
            let cam = cfg.sfs.camera(field.rows, field.cols)?;
            let res = lax_friedrichs_solve(&field, &cam, &cfg.sfs.solver)?;
            let depth = out_dir.join(format!("{id}.pgm"));
            let sidecar = write_depth_pgm(&depth, &res.log_depth.depth(), &res.report)?;
            if !res.report.converged {
                log::warn!("{id}: not converged (residual {:.3e})", res.report.residual);
            }
            Ok(SfsItem { id, depth, sidecar })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut csv = String::from("id,converged,degenerate,residual,sweeps,albedo,min_depth,max_depth\n");
    for it in &items {
        let s = &it.sidecar;
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{},{},{},{}",
            it.id, s.converged, s.degenerate, s.residual, s.sweeps, s.albedo, s.min_depth, s.max_depth
        );
    }
    let path = cfg.output.join("sfs_report.csv");
    std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    let converged = items.iter().filter(|i| i.sidecar.converged).count();
    println!("sfs: {converged}/{} images converged", items.len());
    Ok(items)
}
