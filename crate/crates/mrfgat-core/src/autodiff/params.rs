//! Named trainable parameters with gradient slots, plus batch-norm running
//! statistics.
//!
//! A [`ParamStore`] owns every trainable tensor of a model as a flat list.
//! Graph construction borrows values out of the store (see
//! [`Tape::param`](super::tape::Tape::param)); after a backward pass the
//! per-use gradients are folded back in with
//! [`Tape::accumulate_param_grads`](super::tape::Tape::accumulate_param_grads).
//!
//! Batch-norm running statistics are deliberately *not* parameters: they are
//! updated by forward passes in training mode, never by the optimizer, and
//! inference reads them immutably.

use crate::autodiff::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position of the parameter in its store (stable for a fixed model
    /// layout, which is what checkpoints rely on).
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Same shape as `value`; owned by the optimizer loop, zeroed between
    /// steps.
    pub grad: Tensor,
}

/// Flat, ordered collection of the trainable tensors of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a tensor under `name` and returns its handle.
    ///
    /// Names must be unique: checkpoints match parameters by position and
    /// double-check names, so a collision is a bug in model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name:?}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of trainable scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Running statistics of one batch-norm layer, one entry per channel.
///
/// Initialized to mean 0 / variance 1; training-mode forward passes blend in
/// the biased batch statistics with the configured momentum, and inference
/// normalizes with these directly.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_roundtrip_and_counts() {
        let mut store = ParamStore::new();
        let a = store.add("w", Tensor::zeros(&[3, 4]));
        let b = store.add("b", Tensor::zeros(&[4]));
        assert_eq!(store.len(), 2);
        assert_eq!(store.scalar_count(), 16);
        assert_eq!(store.get(a).name, "w");
        assert_eq!(store.find("b"), Some(b));
        assert_eq!(store.find("missing"), None);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1]));
        store.add("w", Tensor::zeros(&[2]));
    }

    #[test]
    fn zero_grads_clears() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2]));
        store.get_mut(id).grad.data_mut()[0] = 5.0;
        store.zero_grads();
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn bn_stats_start_at_identity() {
        let s = BnStats::new(3);
        assert_eq!(s.mean, vec![0.0; 3]);
        assert_eq!(s.var, vec![1.0; 3]);
        assert_eq!(s.channels(), 3);
    }
}
