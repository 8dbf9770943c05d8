//! Minimal reverse-mode differentiable-computation core.
//!
//! Everything the agent needs and nothing more: named parameter tensors in
//! one flat arena, an eager tape of vector ops with exact reverse-mode
//! gradients (including backpropagation through time across GRU step
//! chains), dense layers, GRU cells with a forgetting-factor variant,
//! Gaussian log-densities, and Adam.

pub mod adam;
pub mod gru;
pub mod tape;

pub use adam::Adam;
pub use gru::{dense_forward, gaussian_logprob, leaky_relu, squash_log_det, Activation, GruCell};
pub use tape::{NodeId, Tape};

use rand::Rng;

use crate::{Error, Result};

/// Handle to one named tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// All trainable tensors of a model, stored contiguously.
///
/// Insertion order is the canonical order: it fixes the flat layout used by
/// gradients, the optimizer, and checkpoints, so identical construction code
/// yields byte-identical serialization.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a zero-initialized tensor.
    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let offset = self.data.len();
        self.data.resize(offset + rows * cols, 0.0);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            offset,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Add a weight matrix initialized uniformly in ±1/sqrt(fan_in), where
    /// fan_in is the column count.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let id = self.add_zeros(name, rows, cols);
        let bound = 1.0 / (cols as f64).sqrt();
        for v in self.slice_mut(id) {
            *v = rng.gen_range(-bound..=bound);
        }
        id
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.rows * e.cols]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = self.entries[id.0].clone();
        &mut self.data[e.offset..e.offset + e.rows * e.cols]
    }

    /// Total number of scalar parameters.
    pub fn len_flat(&self) -> usize {
        self.data.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Check that another set has the identical layout (for checkpoints).
    pub fn layout_matches(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Checkpoint(format!(
                "tensor count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: {}({}x{}) vs {}({}x{})",
                    a.name, a.rows, a.cols, b.name, b.rows, b.cols
                )));
            }
        }
        Ok(())
    }
}

/// Gradient accumulator aligned with a [`ParamSet`]'s flat layout.
#[derive(Debug, Clone)]
pub struct GradBuf {
    data: Vec<f64>,
}

impl GradBuf {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradBuf {
            data: vec![0.0; params.len_flat()],
        }
    }

    pub fn reset(&mut self) {
        for v in &mut self.data {
            *v = 0.0;
        }
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Scale all gradients (e.g. averaging over accumulated episodes).
    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }
}
