//! A small, deterministic CPU neural-net engine: NHWC tensors, explicit
//! backprop, no autograd. Everything is f32; all parallel reductions use
//! fixed chunking so identical inputs give bitwise identical outputs.

pub mod linalg;
pub mod layers;
pub mod loss;
pub mod sgd;

use ndarray::ArrayD;

/// A trainable parameter with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    /// Whether L2 weight decay applies (true for conv/linear weights,
    /// false for biases and norm scales).
    pub decay: bool,
}

impl Param {
    pub fn new(value: ArrayD<f32>, decay: bool) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// A differentiable layer. `forward(train=true)` caches whatever `backward`
/// needs; `backward` consumes the cache and accumulates parameter gradients.
pub trait Layer: Send + Sync {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32>;
    fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32>;

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Named tensors (parameters and buffers) for checkpointing.
    fn state(&self) -> Vec<(String, ArrayD<f32>)> {
        Vec::new()
    }

    /// Mutable views over the same tensors `state` reports, same order.
    fn state_mut(&mut self) -> Vec<(String, &mut ArrayD<f32>)> {
        Vec::new()
    }

    /// Enable or disable running-statistic tracking (batch norm). Train-mode
    /// forwards still normalize with batch statistics either way.
    fn set_stat_tracking(&mut self, on: bool) {
        let _ = on;
    }

    /// When enabled, train-mode forwards normalize with the frozen running
    /// statistics instead of batch statistics (batch norm).
    fn set_frozen_norm(&mut self, on: bool) {
        let _ = on;
    }

    fn clone_box(&self) -> Box<dyn Layer>;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// A named sequence of layers.
#[derive(Clone, Default)]
pub struct Network {
    pub layers: Vec<(String, Box<dyn Layer>)>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self.layers.iter().map(|(n, _)| n.as_str()).collect();
        f.debug_struct("Network").field("layers", &names).finish()
    }
}

impl Network {
    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer + 'static) {
        self.layers.push((name.into(), Box::new(layer)));
    }

    pub fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let mut h = x;
        for (_, l) in self.layers.iter_mut() {
            h = l.forward(h, train);
        }
        h
    }

    pub fn backward(&mut self, dy: ArrayD<f32>) -> ArrayD<f32> {
        let mut g = dy;
        for (_, l) in self.layers.iter_mut().rev() {
            g = l.backward(g);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|(_, l)| l.params_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn set_stat_tracking(&mut self, on: bool) {
        for (_, l) in self.layers.iter_mut() {
            l.set_stat_tracking(on);
        }
    }

    pub fn set_frozen_norm(&mut self, on: bool) {
        for (_, l) in self.layers.iter_mut() {
            l.set_frozen_norm(on);
        }
    }

    /// Flat list of `prefix.name` tensors in a stable order.
    pub fn state(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        for (name, l) in &self.layers {
            for (k, v) in l.state() {
                out.push((format!("{name}.{k}"), v));
            }
        }
        out
    }

    /// Load tensors saved by `state`. Order and shapes must match exactly.
    pub fn load_state(&mut self, entries: &[(String, ArrayD<f32>)]) -> crate::Result<()> {
        let mut slots: Vec<(String, &mut ArrayD<f32>)> = Vec::new();
        for (name, l) in self.layers.iter_mut() {
            for (k, v) in l.state_mut() {
                slots.push((format!("{name}.{k}"), v));
            }
        }
        if slots.len() != entries.len() {
            return Err(crate::Error::format(format!(
                "checkpoint has {} tensors, network expects {}",
                entries.len(),
                slots.len()
            )));
        }
        for ((want_name, slot), (got_name, value)) in slots.into_iter().zip(entries) {
            if &want_name != got_name {
                return Err(crate::Error::format(format!(
                    "checkpoint tensor {got_name} where {want_name} was expected"
                )));
            }
            if slot.shape() != value.shape() {
                return Err(crate::Error::format(format!(
                    "tensor {got_name}: shape {:?} does not match {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            slot.assign(value);
        }
        Ok(())
    }
}
