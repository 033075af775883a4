use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    /// Output projection shares the token embedding matrix.
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, width 128, FFN 512, 256
    /// positions.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            context_len: 256,
            vocab_size,
            dropout_rate: 0.1,
            tie_embeddings: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("context_len", self.context_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Model(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Model(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Model(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerTensors {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Names, shapes and flat offsets of every tensor, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerTensors>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) out_w: Option<usize>,
    pub(crate) out_b: usize,
    pub total: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Ones,
    Zeros,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut b = Builder::default();
        let (v, d, f, c) = (cfg.vocab_size, cfg.d_model, cfg.d_ff, cfg.context_len);
        let tok_emb = b.add("tok_emb", &[v, d]);
        let pos_emb = b.add("pos_emb", &[c, d]);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let mut add = |name: &str, shape: &[usize]| b.add(&format!("layer{l}.{name}"), shape);
                LayerTensors {
                    ln1_g: add("ln1.gamma", &[d]),
                    ln1_b: add("ln1.beta", &[d]),
                    wq: add("attn.wq", &[d, d]),
                    bq: add("attn.bq", &[d]),
                    wk: add("attn.wk", &[d, d]),
                    bk: add("attn.bk", &[d]),
                    wv: add("attn.wv", &[d, d]),
                    bv: add("attn.bv", &[d]),
                    wo: add("attn.wo", &[d, d]),
                    bo: add("attn.bo", &[d]),
                    ln2_g: add("ln2.gamma", &[d]),
                    ln2_b: add("ln2.beta", &[d]),
                    w1: add("ffn.w1", &[d, f]),
                    b1: add("ffn.b1", &[f]),
                    w2: add("ffn.w2", &[f, d]),
                    b2: add("ffn.b2", &[d]),
                }
            })
            .collect();
        let lnf_g = b.add("ln_f.gamma", &[d]);
        let lnf_b = b.add("ln_f.beta", &[d]);
        let out_w = (!cfg.tie_embeddings).then(|| b.add("out.w", &[d, v]));
        let out_b = b.add("out.b", &[v]);
        Layout {
            total: b.total,
            tensors: b.tensors,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            out_w,
            out_b,
        }
    }

    fn init_kind(name: &str) -> Init {
        if name.ends_with(".gamma") {
            Init::Ones
        } else if name.ends_with(".beta") || name.contains(".b") {
            Init::Zeros
        } else {
            Init::Normal
        }
    }
}

#[derive(Default)]
struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: &str, shape: &[usize]) -> usize {
        let info = TensorInfo {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += info.numel();
        self.tensors.push(info);
        self.tensors.len() - 1
    }
}

/// All weights of a model in one flat buffer. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layout: Arc<Layout>,
    pub data: Vec<T>,
}

pub type Gradients<T> = ModelParams<T>;

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(ModelParams {
            config: config.clone(),
            data: vec![T::zero(); layout.total],
            layout: Arc::new(layout),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, id: usize) -> &[T] {
        &self.data[self.layout.tensors[id].range()]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut [T] {
        let r = self.layout.tensors[id].range();
        &mut self.data[r]
    }

    pub fn tensor_by_name(&self, name: &str) -> Option<&[T]> {
        let id = self.layout.tensors.iter().position(|t| t.name == name)?;
        Some(self.tensor(id))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// Normal(0, 0.02) weights, unit norm scales, zero biases. Deterministic in
/// `(config, seed)`.
pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    let mut params = ModelParams::<T>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let layout = Arc::clone(&params.layout);
    for info in &layout.tensors {
        let kind = Layout::init_kind(&info.name);
        for x in &mut params.data[info.range()] {
            *x = match kind {
                Init::Normal => T::of(normal.sample(&mut rng)),
                Init::Ones => T::one(),
                Init::Zeros => T::zero(),
            };
        }
    }
    Ok(params)
}
