//! Named parameter storage.
//!
//! Every learnable tensor and batch-norm running statistic lives in one
//! [`ParamStore`] under a canonical dotted name. Layers hold handles that
//! share storage with the store's `Var`s, so optimizer updates and
//! checkpoint snapshots both see the same values. Names containing
//! `running_` are state, not trainable parameters, and are never handed to
//! an optimizer.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum ParamInit {
    /// Uniform over `±sqrt(1/fan_in)`, the framework default for conv and
    /// linear weights.
    KaimingUniform { fan_in: usize },
    /// Uniform over `±bound`.
    UniformBound { bound: f64 },
    Const(f64),
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            device,
            dtype,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Create a parameter from an init scheme; returns a handle sharing the
    /// var's storage.
    pub fn insert_init(
        &mut self,
        name: &str,
        shape: &[usize],
        init: ParamInit,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            ParamInit::KaimingUniform { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            ParamInit::UniformBound { bound } => {
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            ParamInit::Const(v) => vec![v; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        self.insert_tensor(name, t)
    }

    /// Register an explicit value (checkpoint or pretrained load).
    pub fn insert_tensor(&mut self, name: &str, value: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        let value = value.to_dtype(self.dtype)?.contiguous()?;
        let var = Var::from_tensor(&value)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Current values keyed by canonical name.
    pub fn named_values(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    fn is_running_stat(name: &str) -> bool {
        name.contains("running_")
    }

    /// Vars an optimizer may update: always the head, plus the backbone when
    /// it is trainable. Running statistics are excluded.
    pub fn optimizable_vars(&self, backbone_trainable: bool) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(name, _)| !Self::is_running_stat(name))
            .filter(|(name, _)| backbone_trainable || name.starts_with("head."))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Vars under a name prefix (running stats included).
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .map(|(name, v)| (name.clone(), v.clone()))
            .collect()
    }
}
