//! Sample loading shared by `train` and `eval`.

use polypseg_core::dataset::{filter_polyp_frames, load_dataset, load_sample, resize_sample, synth_dataset, Sample};
use polypseg_core::raster::Field;
use polypseg_core::sfs::{depth_to_channel, lax_friedrichs_solve};
use rayon::prelude::*;

use crate::config::{DepthSource, InputMode, RunConfig};
use crate::error::{CliError, CliResult};

/// Mean of the color channels, the intensity the shading solver reads.
pub fn intensity(sample: &Sample) -> Field {
    Field::from_fn(sample.rows(), sample.cols(), |i, j| {
        (0..3).map(|c| sample.image.get(0, c, i, j)).sum::<f64>() / 3.0
    })
}

/// Replaces each frame's depth with the shape-from-shading estimate.
pub fn attach_sfs_depth(samples: &mut [Sample], cfg: &RunConfig) -> CliResult<()> {
    samples.par_iter_mut().try_for_each(|s| {
        let cam = cfg.sfs.camera(s.rows(), s.cols())?;
        let res = lax_friedrichs_solve(&intensity(s), &cam, &cfg.sfs.solver)?;
        if !res.report.converged {
            log::warn!("{}: shading solver stopped at residual {:.3e}", s.id, res.report.residual);
        }
        s.depth = Some(depth_to_channel(&res.log_depth));
        Ok(())
    })
}

/// Frames in a stable order, preprocessed per `cfg.data`.
pub fn load_samples(cfg: &RunConfig) -> CliResult<Vec<Sample>> {
    let d = &cfg.data;
    let mut samples = match (&d.synthetic, &d.root) {
        (Some(s), _) => synth_dataset(s)?,
        (None, Some(root)) => {
            let mut manifest = load_dataset(root, &d.layout)?;
            for skip in &manifest.skipped {
                log::warn!("skipped {}: {}", skip.path.display(), skip.reason);
            }
            if d.polyp_only {
                manifest = filter_polyp_frames(&manifest)?;
            }
            manifest
                .records
                .par_iter()
                .map(load_sample)
                .collect::<Result<Vec<_>, _>>()?
        }
        (None, None) => return Err(CliError::Config("no dataset: set data.root or data.synthetic".into())),
    };
    if d.polyp_only {
        samples.retain(Sample::has_polyp);
    }
    if samples.is_empty() {
        return Err(CliError::Data("dataset holds no frames".into()));
    }
    if let Some(side) = d.resize {
        samples = samples
            .par_iter()
            .map(|s| resize_sample(s, side, side))
            .collect::<Result<Vec<_>, _>>()?;
    }
    if cfg.network.input == InputMode::Rgbd && d.depth == DepthSource::Sfs {
        attach_sfs_depth(&mut samples, cfg)?;
    }
    log::info!("loaded {} frames", samples.len());
    Ok(samples)
}
