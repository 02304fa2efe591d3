//! Assembles networks from one of three parameter sources: seeded random
//! init, a pretrained backbone file (head re-initialized, extra keys
//! ignored), or a checkpoint (strict: every key must match exactly).
//!
//! Problems are collected rather than returned eagerly so a failed load
//! reports every missing or mismatched parameter at once.

use std::collections::HashMap;

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::store::{ParamInit, ParamStore};

pub(crate) enum ParamSource {
    Random,
    /// Backbone parameters from a pretrained file; `head.*` is freshly
    /// initialized and unused file keys (e.g. a foreign classifier) are
    /// ignored.
    PretrainedBackbone(HashMap<String, Tensor>),
    /// Every parameter from a checkpoint; unused keys are an error.
    Checkpoint(HashMap<String, Tensor>),
}

pub(crate) struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    source: ParamSource,
    rng: &'a mut ChaCha8Rng,
    problems: Vec<String>,
}

impl<'a> ParamBuilder<'a> {
    pub(crate) fn new(store: &'a mut ParamStore, source: ParamSource, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            source,
            rng,
            problems: Vec::new(),
        }
    }

    /// Create or load the named parameter and return a storage-sharing
    /// handle for the layer.
    pub(crate) fn param(&mut self, name: &str, shape: &[usize], init: ParamInit) -> Result<Tensor> {
        let from_file = match &mut self.source {
            ParamSource::Random => None,
            ParamSource::PretrainedBackbone(map) => {
                if name.starts_with("head.") {
                    None
                } else {
                    match map.remove(name) {
                        Some(t) if t.dims() == shape => Some(t),
                        Some(t) => {
                            self.problems.push(format!(
                                "{name}: file shape {:?} vs model shape {shape:?}",
                                t.dims()
                            ));
                            None
                        }
                        None => {
                            self.problems.push(format!("{name}: missing from weights file"));
                            None
                        }
                    }
                }
            }
            ParamSource::Checkpoint(map) => match map.remove(name) {
                Some(t) if t.dims() == shape => Some(t),
                Some(t) => {
                    self.problems.push(format!(
                        "{name}: file shape {:?} vs model shape {shape:?}",
                        t.dims()
                    ));
                    None
                }
                None => {
                    self.problems.push(format!("{name}: missing from checkpoint"));
                    None
                }
            },
        };
        match from_file {
            Some(t) => self.store.insert_tensor(name, t),
            None => self.store.insert_init(name, shape, init, self.rng),
        }
    }

    /// Var handle for a parameter created earlier (batch-norm running stats).
    pub(crate) fn var(&self, name: &str) -> candle_core::Var {
        self.store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} registered before var()"))
            .clone()
    }

    /// Fail with the full problem list; strict sources also flag leftovers.
    pub(crate) fn finish(self) -> Result<()> {
        let mut problems = self.problems;
        if let ParamSource::Checkpoint(map) = &self.source {
            for name in map.keys() {
                problems.push(format!("{name}: unexpected parameter in checkpoint"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            problems.sort();
            Err(Error::ParamMismatch(problems))
        }
    }
}
