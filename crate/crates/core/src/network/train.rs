//! Mini-batch SGD over a sample set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::Network;
use crate::dataset::{assemble_batch, random_flip, sample_patch, Sample};
use crate::error::{Error, Result};
use crate::tensor::{sgd_momentum_step, softmax_xent, BnMode, LossNorm, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Total iteration count; a resumed run continues up to this value.
    pub iterations: u64,
    /// Square training patch side; `None` trains on whole frames.
    pub patch: Option<usize>,
    pub vertical_flip: bool,
    pub seed: u64,
    pub loss_norm: LossNorm,
    pub checkpoint_every: Option<u64>,
    pub with_depth: bool,
    /// A loss above this (or a non-finite one) stops training.
    pub divergence_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            momentum: 0.99,
            batch_size: 1,
            iterations: 100,
            patch: None,
            vertical_flip: false,
            seed: 0,
            loss_norm: LossNorm::Mean,
            checkpoint_every: None,
            with_depth: false,
            divergence_loss: 1e6,
        }
    }
}

pub trait TrainObserver {
    fn on_iteration(&mut self, _iteration: u64, _loss: f64) {}
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Loss of each iteration run in this call.
    pub losses: Vec<f64>,
}

impl Checkpoint {
    /// Iteration-zero state without optimizer history.
    pub fn fresh(net: Network, config_digest: [u8; 32]) -> Self {
        Checkpoint {
            spec: net.spec,
            params: net.params,
            optimizer: None,
            iteration: 0,
            config_digest,
        }
    }
}

fn draw_batch(data: &[Sample], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let s = data.choose(rng).expect("non-empty");
        let s = random_flip(s, rng, cfg.vertical_flip);
        out.push(match cfg.patch {
            Some(p) => sample_patch(&s, p, rng)?,
            None => s,
        });
    }
    Ok(out)
}

/// Trains from `start` until `cfg.iterations`. Iteration `k` draws its batch
/// from a stream keyed by `(seed, k)`, so a resumed run repeats the batches of
/// an uninterrupted one.
///
/// On divergence the observer receives the last state with finite values
/// and `Error::Divergence` is returned.
pub fn train_loop(
    start: Checkpoint,
    data: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let Checkpoint {
        spec,
        params,
        optimizer,
        mut iteration,
        config_digest,
    } = start;
    let mut net = Network::from_parts(spec, params)?;
    let mut opt = match optimizer {
        Some(mut o) => {
            if o.velocity.len() != net.params.len() {
                return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
            }
            let fresh = OptimizerState::new(cfg.lr, cfg.momentum, &[])?;
            o.base_lr = fresh.base_lr;
            o.momentum = fresh.momentum;
            o
        }
        None => {
            let values: Vec<_> = net.params.iter().map(|p| &p.value).collect();
            OptimizerState::new(cfg.lr, cfg.momentum, &values)?
        }
    };
    let lr_mults: Vec<f64> = net
        .params
        .iter()
        .map(|p| if p.role.is_buffer() { 0.0 } else { p.lr_mult })
        .collect();
    let names: Vec<String> = net.params.iter().map(|p| p.name.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let snapshot = |net: &Network, opt: &OptimizerState, iteration: u64| Checkpoint {
        spec: net.spec.clone(),
        params: net.params.clone(),
        optimizer: Some(opt.clone()),
        iteration,
        config_digest,
    };

    let mut losses = Vec::new();
    while iteration < cfg.iterations {
        let mut rng = base.clone();
        rng.set_stream(iteration);
        let batch = draw_batch(data, cfg, &mut rng)?;
        let (input, labels) = assemble_batch(&batch, cfg.with_depth)?;

        let before = net.params.clone();
        let trace = net.forward(&input, BnMode::Train)?;
        let (loss, grad) = softmax_xent(trace.output(), &labels, cfg.loss_norm)?;
        let diverged = |net: &mut Network, observer: &mut dyn TrainObserver, opt: &OptimizerState| {
            net.params = before.clone();
            observer.on_checkpoint(&snapshot(net, opt, iteration))?;
            Err(Error::Divergence {
                iteration: iteration as usize + 1,
                loss,
            })
        };
        if !loss.is_finite() || loss > cfg.divergence_loss {
            return diverged(&mut net, observer, &opt);
        }
        let grads = net.backward(&trace, &grad)?;
        let grad_refs: Vec<_> = grads.params.iter().collect();
        let mut values = net.params.values_mut();
        match sgd_momentum_step(&mut values, &grad_refs, &lr_mults, &name_refs, &mut opt) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient(name)) => {
                log::warn!("non-finite gradient in {name} at iteration {}", iteration + 1);
                return diverged(&mut net, observer, &opt);
            }
            Err(e) => return Err(e),
        }
        if !net.params.iter().all(|p| p.value.all_finite()) {
            return diverged(&mut net, observer, &opt);
        }
        iteration += 1;
        losses.push(loss);
        observer.on_iteration(iteration, loss);
        if cfg.checkpoint_every.is_some_and(|k| k > 0 && iteration % k == 0) {
            observer.on_checkpoint(&snapshot(&net, &opt, iteration))?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&net, &opt, iteration),
        losses,
    })
}
