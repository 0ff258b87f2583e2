//! Layer graphs, their execution, and the classifier-to-FCN rewrites.

mod checkpoint;
mod graph;
mod mini;
mod params;
mod spec;
mod train;
mod transform;

pub use checkpoint::{config_digest, hex, manifest_path, Checkpoint};
pub use graph::{backward, forward, Gradients, Trace};
pub use mini::{mini_classifier, mini_fcn, MiniArch, MiniConfig, Variant};
pub use params::{initial_value, Param, ParamStore};
pub use spec::{LayerKind, LayerSpec, NetworkSpec, ParamDecl, ParamRole};
pub use train::{train_loop, TrainConfig, TrainObserver, TrainOutcome};
pub use transform::{add_batchnorm, fcn_convert, rgbd_extend, CLASSES, DEPTH_LR_MULT, SCORE_LR_MULT};

use crate::error::Result;
use crate::tensor::{BnMode, Tensor};

/// A spec together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

impl Network {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&spec, seed)?;
        Ok(Network { spec, params })
    }

    pub fn from_parts(spec: NetworkSpec, params: ParamStore) -> Result<Self> {
        params.check_against(&spec)?;
        Ok(Network { spec, params })
    }

    /// Inference-mode output.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(forward(&self.spec, &self.params, input, BnMode::Infer)?.into_output())
    }

    /// Forward pass; in train mode the running statistics are updated.
    pub fn forward(&mut self, input: &Tensor, mode: BnMode) -> Result<Trace> {
        let trace = forward(&self.spec, &self.params, input, mode)?;
        for (layer, mean, var) in &trace.running_updates {
            for (suffix, values) in [("running_mean", mean), ("running_var", var)] {
                let name = format!("{layer}.{suffix}");
                let t = self.params.require(&name)?.shape();
                *self.params.get_mut(&name).expect("checked above") = Tensor::from_vec(t, values.clone())?;
            }
        }
        Ok(trace)
    }

    pub fn backward(&self, trace: &Trace, grad_out: &Tensor) -> Result<Gradients> {
        backward(&self.spec, &self.params, trace, grad_out)
    }
}
