use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::spec::{NetworkSpec, ParamDecl, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::{bilinear_kernel, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub lr_mult: f64,
    pub value: Tensor,
}

/// Parameters and buffers of a network, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

fn dims_shape(d: [usize; 4]) -> Shape {
    Shape::new(d[0], d[1], d[2], d[3])
}

/// Per-parameter generator so that initial values depend on the seed and
/// the parameter name only, not on the position in the network.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Default initial value of a declared parameter.
pub fn initial_value(d: &ParamDecl, seed: u64) -> Result<Tensor> {
    let shape = dims_shape(d.dims);
    Ok(match d.role {
        ParamRole::Weight => {
            let fan_in = (d.dims[1] * d.dims[2] * d.dims[3]) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                .map_err(|e| Error::Config(format!("{}: {e}", d.name)))?;
            let mut rng = param_rng(seed, &d.name);
            let data = (0..shape.len()).map(|_| normal.sample(&mut rng)).collect();
            Tensor::from_vec(shape, data)?
        }
        ParamRole::Gamma | ParamRole::RunningVar => Tensor::filled(shape, 1.0),
        ParamRole::Upsample => bilinear_kernel(d.dims[2], d.dims[0])?,
        ParamRole::Bias | ParamRole::Beta | ParamRole::RunningMean | ParamRole::ScoreWeight | ParamRole::ScoreBias => {
            Tensor::zeros(shape)
        }
    })
}

impl ParamStore {
    /// Fresh parameters: He-normal weights, zero biases, zero score layer,
    /// bilinear upsampling, identity batch normalization.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let decls = spec.params()?;
        let mut params = Vec::with_capacity(decls.len());
        for d in &decls {
            params.push(Param {
                name: d.name.clone(),
                role: d.role,
                lr_mult: d.lr_mult,
                value: initial_value(d, seed)?,
            });
        }
        Ok(Self::from_params(params))
    }

    /// Parameters for `spec`, reusing every tensor of `old` whose name and
    /// shape still match and initializing the rest.
    pub fn carry_over(spec: &NetworkSpec, old: &ParamStore, seed: u64) -> Result<Self> {
        let decls = spec.params()?;
        let mut params = Vec::with_capacity(decls.len());
        for d in &decls {
            let value = match old.get(&d.name) {
                Some(t) if t.shape() == dims_shape(d.dims) => t.clone(),
                _ => initial_value(d, seed)?,
            };
            params.push(Param {
                name: d.name.clone(),
                role: d.role,
                lr_mult: d.lr_mult,
                value,
            });
        }
        Ok(Self::from_params(params))
    }

    pub(crate) fn from_params(params: Vec<Param>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        ParamStore { params, index }
    }

    /// Checks that the store holds exactly the tensors `spec` declares.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let decls = spec.params()?;
        if decls.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "spec declares {} tensors, store holds {}",
                decls.len(),
                self.params.len()
            )));
        }
        for (d, p) in decls.iter().zip(&self.params) {
            if d.name != p.name {
                return Err(Error::Validation(format!("expected tensor {}, found {}", d.name, p.name)));
            }
            p.value.expect_shape(dims_shape(d.dims))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.params[i].value)
    }

    pub fn param(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn param_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter tensor {name}")))
    }

    pub(crate) fn require_index(&self, name: &str) -> Result<usize> {
        self.position(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter tensor {name}")))
    }

    pub(crate) fn values_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    /// Total number of scalar values, buffers excluded.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.role.is_buffer())
            .map(|p| p.value.len())
            .sum()
    }
}
