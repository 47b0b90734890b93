//! Named parameter arena shared by model, optimizer and checkpoints.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Index of one parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Flat arena of named parameter tensors and their gradients.
///
/// Models allocate parameters in a fixed construction order; optimizers and
/// checkpoints address them either by [`ParamId`] or by name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    grads: Vec<ArrayD<f64>>,
}

/// How to fill a freshly allocated tensor.
pub enum Init<'r> {
    Zeros,
    Ones,
    /// Uniform in ±1/sqrt(fan_in).
    FanInUniform { fan_in: usize, rng: &'r mut ChaCha8Rng },
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        let value = match init {
            Init::Zeros => ArrayD::zeros(IxDyn(shape)),
            Init::Ones => ArrayD::ones(IxDyn(shape)),
            Init::FanInUniform { fan_in, rng } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..bound))
            }
        };
        let grad = ArrayD::zeros(IxDyn(shape));
        self.names.push(name);
        self.values.push(value);
        self.grads.push(grad);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }
    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }
    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }
    pub fn grad(&self, id: ParamId) -> &ArrayD<f64> {
        &self.grads[id.0]
    }

    /// Accumulate `delta` into the gradient of `id`.
    pub fn add_grad(&mut self, id: ParamId, delta: &ArrayD<f64>) {
        debug_assert_eq!(self.grads[id.0].shape(), delta.shape());
        self.grads[id.0] += delta;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Iterate `(name, value)` pairs in allocation order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    /// Copy every value out (for best-checkpoint tracking).
    pub fn snapshot(&self) -> Vec<ArrayD<f64>> {
        self.values.clone()
    }

    /// Restore a snapshot taken from the same store layout.
    pub fn restore(&mut self, snapshot: &[ArrayD<f64>]) {
        assert_eq!(snapshot.len(), self.values.len());
        for (dst, src) in self.values.iter_mut().zip(snapshot) {
            dst.assign(src);
        }
    }
}
