//! Decoder-only transformer: learned positions, pre-norm blocks, GELU
//! feed-forward, tied output projection, hand-written backward pass.

mod checkpoint;
mod decoder;
mod linalg;
mod params;
mod transformer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use decoder::Decoder;
pub use linalg::Real;
pub use params::{init_params, Gradients, Layout, ModelConfig, ModelParams, TensorInfo};
pub use transformer::{backward, forward, loss_and_grads, nll_loss};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, PAD};

/// Padded token ids with a per-position loss weight. `mask[b][i]` weights
/// the prediction of token `i` from the prefix ending at `i - 1`, so
/// position 0 never carries loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub ids: Vec<TokenId>,
    pub mask: Vec<f64>,
    pub lengths: Vec<usize>,
    pub seq_len: usize,
}

impl SequenceBatch {
    /// Pads to the longest sequence; every token after the first carries
    /// unit weight.
    pub fn from_sequences(seqs: &[Vec<TokenId>]) -> Self {
        let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = vec![PAD; seqs.len() * seq_len];
        let mut mask = vec![0.0; seqs.len() * seq_len];
        for (b, s) in seqs.iter().enumerate() {
            ids[b * seq_len..b * seq_len + s.len()].copy_from_slice(s);
            for w in &mut mask[b * seq_len + 1.min(s.len())..b * seq_len + s.len()] {
                *w = 1.0;
            }
        }
        SequenceBatch {
            ids,
            mask,
            lengths: seqs.iter().map(Vec::len).collect(),
            seq_len,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, b: usize) -> &[TokenId] {
        &self.ids[b * self.seq_len..b * self.seq_len + self.lengths[b]]
    }

    pub fn row_mask(&self, b: usize) -> &[f64] {
        &self.mask[b * self.seq_len..b * self.seq_len + self.lengths[b]]
    }

    pub fn mask_total(&self) -> f64 {
        self.mask.iter().sum()
    }

    /// Checks shapes, id range, context length and that weights sit only on
    /// valid positions after the first.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let cells = self.batch_size() * self.seq_len;
        if self.ids.len() != cells || self.mask.len() != cells {
            return Err(Error::Model("batch buffers do not match batch × seq".into()));
        }
        if self.seq_len > config.context_len {
            return Err(Error::Model(format!(
                "sequence length {} exceeds context {}",
                self.seq_len, config.context_len
            )));
        }
        for b in 0..self.batch_size() {
            let len = self.lengths[b];
            if len > self.seq_len {
                return Err(Error::Model(format!("row {b} length {len} exceeds padded width")));
            }
            if let Some(&id) = self.row(b).iter().find(|&&id| id as usize >= config.vocab_size) {
                return Err(Error::Model(format!(
                    "token id {id} out of range for vocab of {}",
                    config.vocab_size
                )));
            }
            let m = &self.mask[b * self.seq_len..(b + 1) * self.seq_len];
            if m.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Model(format!("row {b} has a negative or non-finite mask weight")));
            }
            if m.first().is_some_and(|&w| w != 0.0) || m[len..].iter().any(|&w| w != 0.0) {
                return Err(Error::Model(format!("row {b} masks a position with no prediction")));
            }
        }
        Ok(())
    }
}

/// Logits laid out `batch × seq × vocab`; positions past a row's length
/// are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub data: Vec<T>,
    pub batch: usize,
    pub seq_len: usize,
    pub vocab: usize,
}

impl<T> Logits<T> {
    pub fn at(&self, b: usize, i: usize) -> &[T] {
        let start = (b * self.seq_len + i) * self.vocab;
        &self.data[start..start + self.vocab]
    }
}
