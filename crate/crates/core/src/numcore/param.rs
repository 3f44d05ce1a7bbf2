use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::Tensor;

static NEXT_PARAM: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A named trainable tensor.
///
/// The id identifies the parameter on a tape so a weight shared by several
/// call sites is bound once and its gradient accumulates.
#[derive(Debug, Clone)]
pub struct Param {
    id: ParamId,
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            id: ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed)),
            name: name.into(),
            value,
        }
    }

    /// `(fan_in, fan_out)` matrix with Glorot-uniform entries.
    pub fn glorot(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Param::new(name, Tensor::uniform(&[fan_in, fan_out], bound, rng))
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Non-trainable tensors that are still part of the model state.
    fn state(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn state_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}
