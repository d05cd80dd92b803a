//! Minimal reverse-mode automatic differentiation for the layer kinds the
//! pipeline's networks use.
//!
//! A [`Network`] is a directed acyclic graph of layer nodes stored in
//! topological order; node 0 is the input. Every activation is a 4-D
//! `[batch, channels, height, width]` tensor of `f32` (dense layers emit
//! `[batch, features, 1, 1]`). Forward passes in [`Mode::Train`] cache
//! activations so that [`Network::backward`] can propagate gradients from
//! any set of seeded nodes back to the parameters and the input.

mod adam;
mod checkpoint;
mod gradcheck;
mod kernels;
mod layer;
pub mod loss;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_params, write_params, ParamRecord, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, probe_network, GradCheckReport};
pub use layer::LayerSpec;
pub use network::{Activations, ArchDescriptor, Network, NetworkBuilder, NodeDesc, NodeId, Param};
pub(crate) use network::splitmix64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense `f32` array of up to four axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.len() > 4 {
            return Err(Error::InvalidArgument(format!(
                "tensors have at most 4 axes, got {}",
                shape.len()
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading axis, or 1 for a scalar.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Values of batch item `b`.
    pub fn item(&self, b: usize) -> &[f32] {
        let per = self.data.len() / self.batch();
        &self.data[b * per..(b + 1) * per]
    }

    pub fn fill(&mut self, v: f32) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped per-sample buffers `[c, h, w]` into a batch.
    pub fn stack(items: &[Vec<f32>], chw: [usize; 3]) -> Result<Tensor> {
        let per = chw[0] * chw[1] * chw[2];
        let mut data = Vec::with_capacity(per * items.len());
        for (i, it) in items.iter().enumerate() {
            if it.len() != per {
                return Err(Error::InvalidArgument(format!(
                    "batch item {i} has {} values, expected {per}",
                    it.len()
                )));
            }
            data.extend_from_slice(it);
        }
        Tensor::new(vec![items.len(), chw[0], chw[1], chw[2]], data)
    }
}
