use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use polypseg_core::network::{config_digest, mini_fcn, rgbd_extend, train_loop, Checkpoint, Network, TrainObserver};
use polypseg_core::Error as CoreError;

use crate::config::{InputMode, RunConfig};
use crate::data::load_samples;
use crate::error::{CliError, CliResult};
use crate::figures;

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub iteration: u64,
    /// Losses of the iterations run by this call, starting after the resume point.
    pub losses: Vec<f64>,
}

struct Saver {
    dir: PathBuf,
    losses: Vec<f64>,
    last: Option<Checkpoint>,
}

impl TrainObserver for Saver {
    fn on_iteration(&mut self, iteration: u64, loss: f64) {
        self.losses.push(loss);
        if iteration.is_multiple_of(100) {
            log::info!("iteration {iteration}: loss {loss:.5}");
        }
    }

    fn on_checkpoint(&mut self, c: &Checkpoint) -> polypseg_core::Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CoreError::Io {
            path: self.dir.clone(),
            source: e,
        })?;
        c.save(&self.dir.join(format!("iter_{:06}.ckpt", c.iteration)))?;
        self.last = Some(c.clone());
        Ok(())
    }
}

pub fn initial_network(cfg: &RunConfig) -> CliResult<Network> {
    let (mini, variant) = cfg.network.mini();
    let net = Network::new(mini_fcn(&mini, variant)?, cfg.seed)?;
    Ok(match cfg.network.input {
        InputMode::Rgb => net,
        InputMode::Rgbd => {
            let (spec, params) = rgbd_extend(&net.spec, &net.params)?;
            Network::from_parts(spec, params)?
        }
    })
}

/// Expected input channels of a mode.
pub fn channels(mode: InputMode) -> usize {
    match mode {
        InputMode::Rgb => 3,
        InputMode::Rgbd => 4,
    }
}

fn write_losses(path: &Path, first: u64, losses: &[f64]) -> CliResult<()> {
    let mut text = String::from("iteration,loss\n");
    for (k, l) in losses.iter().enumerate() {
        let _ = writeln!(text, "{},{l:e}", first + k as u64 + 1);
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Trains per `cfg`, optionally continuing from `resume`. Writes the config
/// echo, periodic and final checkpoints, `loss.csv` and `loss.png`.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> CliResult<TrainSummary> {
    cfg.echo()?;
    let samples = load_samples(cfg)?;
    let digest = config_digest(&cfg.digest_text());
    let start = match resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            let want = channels(cfg.network.input);
            if c.spec.input_channels != want {
                return Err(CliError::Config(format!(
                    "checkpoint {} takes {} input channels but the config asks for {want}",
                    p.display(),
                    c.spec.input_channels
                )));
            }
            c
        }
        None => Checkpoint::fresh(initial_network(cfg)?, digest),
    };
    let first = start.iteration;
    let mut saver = Saver {
        dir: cfg.output.join("checkpoints"),
        losses: Vec::new(),
        last: None,
    };
    let result = train_loop(start, &samples, &cfg.train_config(), &mut saver);
    write_losses(&cfg.output.join("loss.csv"), first, &saver.losses)?;
    figures::loss_curve(&saver.losses, &cfg.output.join("loss.png"))?;
    match result {
        Ok(out) => {
            let path = cfg.output.join("final.ckpt");
            out.checkpoint.save(&path)?;
            Ok(TrainSummary {
                checkpoint: path,
                iteration: out.checkpoint.iteration,
                losses: out.losses,
            })
        }
        Err(e @ CoreError::Divergence { .. }) => {
            let mut msg = e.to_string();
            if let Some(last) = &saver.last {
                let path = cfg.output.join("diverged.ckpt");
                last.save(&path)?;
                let _ = write!(msg, "; last finite state (iteration {}) saved to {}", last.iteration, path.display());
            }
            Err(CliError::Divergence(msg))
        }
        Err(e) => Err(e.into()),
    }
}
