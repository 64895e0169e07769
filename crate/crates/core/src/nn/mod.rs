//! Minimal hand-differentiated neural network toolkit, `f64` throughout.

pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod lstm;
pub mod optim;
pub mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, maxpool_backward, maxpool_forward};
pub use layers::{
    argmax_rows, dense_backward, dense_forward, dropout, dropout_backward, relu, relu_backward, softmax,
    softmax_cross_entropy,
};
pub use lstm::{lstm_cell_step, lstm_sequence_backward, lstm_sequence_forward, LstmState};
pub use optim::{adam_step, clip_elementwise, clip_global_norm, global_norm, xavier_init, xavier_uniform, AdamState};
pub use tensor::{matmul, Tensor};

use crate::error::{Error, Result};

/// Named parameters with gradient buffers of matching shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
    pub grads: Vec<Tensor>,
}

impl ParamSet {
    /// Adds a parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn accumulate(&mut self, idx: usize, grad: &Tensor) -> Result<()> {
        self.grads[idx].add_assign(grad)
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_values(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config(format!(
                "parameter names differ: expected {:?}, found {:?}",
                self.names, other.names
            )));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("load parameters", dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}
