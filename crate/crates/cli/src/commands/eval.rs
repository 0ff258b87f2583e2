use polypseg_core::dataset::{assemble_batch, Sample};
use polypseg_core::metrics::{
    aggregate_report, argmax_segmentation, detection_metrics, per_image_csv, pixel_metrics, summary_table, ImageResult,
    MetricsReport,
};
use polypseg_core::network::{Checkpoint, Network};
use polypseg_core::raster::Mask;
use polypseg_core::tensor::Tensor;
use rayon::prelude::*;

use super::train::channels;
use crate::config::{InputMode, Predictor, RunConfig};
use crate::data::load_samples;
use crate::error::{CliError, CliResult};
use crate::figures;

fn load_network(cfg: &RunConfig) -> CliResult<Network> {
    let path = cfg
        .eval
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("eval needs eval.checkpoint (or --checkpoint)".into()))?;
    let c = Checkpoint::load(path)?;
    let want = channels(cfg.network.input);
    if c.spec.input_channels != want {
        let hint = if c.spec.input_channels == 4 {
            "it was trained on RGB-D input; set network.input = \"rgbd\""
        } else {
            "it was trained on RGB input; set network.input = \"rgb\""
        };
        return Err(CliError::Config(format!(
            "checkpoint {} expects {} input channels but {want} were configured: {hint}",
            path.display(),
            c.spec.input_channels
        )));
    }
    Ok(Network::from_parts(c.spec, c.params)?)
}

fn predict(net: Option<&Network>, s: &Sample, cfg: &RunConfig) -> CliResult<(Mask, Option<Tensor>)> {
    Ok(match cfg.eval.predictor {
        Predictor::Oracle => (s.union.clone(), None),
        Predictor::Empty => (Mask::empty(s.rows(), s.cols()), None),
        Predictor::Network => {
            let net = net.expect("loaded for network predictor");
            let (x, _) = assemble_batch(std::slice::from_ref(s), cfg.network.input == InputMode::Rgbd)?;
            let scores = net.predict(&x)?;
            (argmax_segmentation(&scores)?, Some(scores))
        }
    })
}

/// Scores every frame and writes `per_image.csv`, `summary.txt`,
/// `metrics.json` and the first few figure panels.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<MetricsReport> {
    let net = match cfg.eval.predictor {
        Predictor::Network => Some(load_network(cfg)?),
        _ => None,
    };
    cfg.echo()?;
    let samples = load_samples(cfg)?;
    let fig_dir = cfg.output.join("figures");
    if cfg.eval.figures > 0 {
        std::fs::create_dir_all(&fig_dir).map_err(|e| CliError::io(&fig_dir, e))?;
    }
    let results = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let (pred, scores) = predict(net.as_ref(), s, cfg)?;
            if k < cfg.eval.figures {
                figures::panel(s, scores.as_ref(), &pred, &fig_dir.join(format!("{}.png", s.id)))?;
            }
            Ok(ImageResult {
                id: s.id.clone(),
                pixel: pixel_metrics(&pred, &s.union)?,
                detection: detection_metrics(&pred, &s.masks, cfg.eval.detection)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = aggregate_report(&results)?;
    let write = |name: &str, text: String| {
        let p = cfg.output.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    write("per_image.csv", per_image_csv(&results))?;
    let label = format!("{:?}", cfg.eval.predictor).to_lowercase();
    let table = summary_table(&label, &report);
    print!("{table}");
    write("summary.txt", table)?;
    write(
        "metrics.json",
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}
