//! Learnable parameter storage.
//!
//! Every model owns one [`ModelParams`]: named tensors registered in a fixed
//! order, each with a paired gradient slot and Adam moment slots. The
//! registration order is the persistence order, which is what makes saved
//! models bit-reproducible.

use crate::diffgraph::{ParamId, Tape, Tensor};
use rand::Rng;

/// How a tensor is filled when the model is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    /// Uniform in `[-scale, scale)`.
    Uniform(f64),
    /// Uniform with the fan-based limit `sqrt(6 / (fan_in + fan_out))`;
    /// vectors count a fan-out of 1.
    Glorot,
    Zero,
}

pub struct ParamEntry {
    pub name: String,
    pub(crate) init: InitKind,
    pub(crate) value: Tensor,
    pub(crate) grad: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

#[derive(Default)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    /// Shared Adam step counter; monotone.
    pub(crate) step: u64,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a zero-initialized tensor with a default small-uniform init.
    /// Names must be unique.
    pub fn register(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        self.register_init(name, shape, InitKind::Uniform(0.08))
    }

    pub fn register_init(&mut self, name: &str, shape: Vec<usize>, init: InitKind) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let numel: usize = shape.iter().product();
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            init,
            value: Tensor::zeros(shape),
            grad: vec![0.0; numel],
            m: vec![0.0; numel],
            v: vec![0.0; numel],
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Register this parameter on a tape as a learnable leaf.
    pub fn node(&self, tape: &mut Tape, id: ParamId) -> crate::diffgraph::NodeId {
        tape.param(id, &self.entries[id.0].value)
    }

    /// Fill every tensor uniformly in `[lo, hi)`, in registration order.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R, lo: f64, hi: f64) {
        for e in self.entries.iter_mut() {
            for v in e.value.data_mut() {
                *v = rng.gen_range(lo..hi);
            }
        }
    }

    /// Fill every tensor per its registered [`InitKind`], in registration
    /// order.
    pub fn init_all<R: Rng>(&mut self, rng: &mut R) {
        for e in self.entries.iter_mut() {
            match e.init {
                InitKind::Zero => e.value.data_mut().iter_mut().for_each(|v| *v = 0.0),
                InitKind::Uniform(scale) => {
                    for v in e.value.data_mut() {
                        *v = rng.gen_range(-scale..scale);
                    }
                }
                InitKind::Glorot => {
                    let shape = e.value.shape();
                    let (fan_out, fan_in) = if shape.len() == 2 {
                        (shape[0], shape[1])
                    } else {
                        (1, shape[0])
                    };
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in e.value.data_mut() {
                        *v = rng.gen_range(-limit..limit);
                    }
                }
            }
        }
    }

    pub fn fill(&mut self, id: ParamId, value: f64) {
        for v in self.entries[id.0].value.data_mut() {
            *v = value;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.iter_mut() {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add a finished tape's parameter gradients into the store.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (pid, g) in tape.param_grads() {
            let slot = &mut self.entries[pid.0].grad;
            for (s, gi) in slot.iter_mut().zip(&g) {
                *s += gi;
            }
        }
    }

    pub fn grads_are_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.grad.iter().all(|g| g.is_finite()))
    }

    // Flat-coordinate view across all tensors, used by finite differences
    // and by persistence.

    pub fn coordinate_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    fn locate(&self, flat: usize) -> (usize, usize) {
        let mut offset = flat;
        for (ei, e) in self.entries.iter().enumerate() {
            if offset < e.value.numel() {
                return (ei, offset);
            }
            offset -= e.value.numel();
        }
        panic!("flat coordinate {flat} out of range");
    }

    pub fn coordinate_name(&self, flat: usize) -> String {
        let (ei, off) = self.locate(flat);
        format!("{}[{}]", self.entries[ei].name, off)
    }

    pub fn get_coordinate(&self, flat: usize) -> f64 {
        let (ei, off) = self.locate(flat);
        self.entries[ei].value.data()[off]
    }

    pub fn nudge_coordinate(&mut self, flat: usize, delta: f64) {
        let (ei, off) = self.locate(flat);
        self.entries[ei].value.data_mut()[off] += delta;
    }

    pub fn grad_coordinate(&self, flat: usize) -> f64 {
        let (ei, off) = self.locate(flat);
        self.entries[ei].grad[off]
    }

    /// Copy of all tensor values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.value.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for (e, s) in self.entries.iter_mut().zip(snapshot) {
            e.value.data_mut().copy_from_slice(s);
        }
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }
}
