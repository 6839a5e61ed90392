//! Named-tensor plumbing shared by every learnable component.

use std::collections::BTreeMap;

use crate::error::{CodecError, Result};
use crate::numeric::{seeded_matrix, Matrix, SeededRng};

/// How fresh weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightInit {
    /// Every matrix uniform on ±1/√fan_in.
    Random,
    /// As `Random`, but the attention output and FFN output projections of
    /// every style transformer block start at zero, so untrained blocks
    /// reduce to layer-normed passthrough.
    #[default]
    ZeroResidual,
}

/// Named tensors in load order; each is consumed exactly once.
#[derive(Debug, Default)]
pub struct TensorStore {
    tensors: BTreeMap<String, Matrix>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, m: Matrix) -> Result<()> {
        if self.tensors.insert(name.clone(), m).is_some() {
            return Err(CodecError::Format(format!("duplicate tensor {name}")));
        }
        Ok(())
    }

    pub fn take(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let m = self
            .tensors
            .remove(name)
            .ok_or_else(|| CodecError::Format(format!("missing tensor {name}")))?;
        if m.shape() != (rows, cols) {
            return Err(CodecError::Format(format!(
                "tensor {name} has shape {:?}, expected ({rows}, {cols})",
                m.shape()
            )));
        }
        if !m.is_finite() {
            return Err(CodecError::Format(format!(
                "tensor {name} has non-finite entries"
            )));
        }
        Ok(m)
    }

    /// Fails if tensors remain that no component claimed.
    pub fn finish(self) -> Result<()> {
        if let Some(name) = self.tensors.keys().next() {
            return Err(CodecError::Format(format!("unexpected tensor {name}")));
        }
        Ok(())
    }
}

/// Ordered output of [`Params::export`].
pub type TensorList = Vec<(String, Matrix)>;

pub trait Params: Sized {
    fn export(&self, prefix: &str, out: &mut TensorList);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform ±1/√fan_in weights.
pub(crate) fn fan_in_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    seeded_matrix(rng, rows, cols, 1.0 / (rows as f32).sqrt()).expect("positive scale")
}
