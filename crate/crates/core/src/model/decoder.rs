use super::linalg::Real;
use super::params::ModelParams;
use super::transformer::{gelu, layer_norm, linear, output_logits};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Incremental eval-mode decoding with a per-layer key/value cache. Each
/// [`Decoder::push`] returns the next-token logits, matching the uncached
/// forward pass up to floating-point reassociation.
#[derive(Debug, Clone)]
pub struct Decoder<'a, T> {
    params: &'a ModelParams<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<'a, T: Real> Decoder<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Self {
        let layers = params.config.n_layers;
        let cap = params.config.context_len * params.config.d_model;
        Decoder {
            params,
            keys: (0..layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..layers).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
        }
    }

    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.params.config.context_len
    }

    /// Feeds one token and returns logits for the token after it.
    pub fn push(&mut self, token: TokenId) -> Result<Vec<T>> {
        let p = self.params;
        let cfg = &p.config;
        if self.is_full() {
            return Err(Error::Model(format!("context of {} tokens is full", cfg.context_len)));
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::Model(format!(
                "token id {token} out of range for vocab of {}",
                cfg.vocab_size
            )));
        }
        let lay = &p.layout;
        let (d, heads, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let pos = self.len;
        let emb = &p.tensor(lay.tok_emb)[token as usize * d..(token as usize + 1) * d];
        let pe = &p.tensor(lay.pos_emb)[pos * d..(pos + 1) * d];
        let mut x: Vec<T> = emb.iter().zip(pe).map(|(a, b)| *a + *b).collect();
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let steps = pos + 1;
        let mut scores = vec![T::zero(); steps];

        for (l, lt) in lay.layers.iter().enumerate() {
            let (h1, _) = layer_norm(&x, p.tensor(lt.ln1_g), p.tensor(lt.ln1_b));
            let q = linear(&h1, p.tensor(lt.wq), p.tensor(lt.bq));
            self.keys[l].extend(linear(&h1, p.tensor(lt.wk), p.tensor(lt.bk)));
            self.values[l].extend(linear(&h1, p.tensor(lt.wv), p.tensor(lt.bv)));
            let (keys, values) = (&self.keys[l], &self.values[l]);
            let mut att = vec![T::zero(); d];
            for h in 0..heads {
                let qh = &q[h * dh..(h + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kh = &keys[j * d + h * dh..j * d + (h + 1) * dh];
                    *s = qh.iter().zip(kh).map(|(a, b)| *a * *b).sum::<T>() * scale;
                }
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for s in &mut scores {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let out = &mut att[h * dh..(h + 1) * dh];
                for (j, s) in scores.iter().enumerate() {
                    let w = *s / sum;
                    let vh = &values[j * d + h * dh..j * d + (h + 1) * dh];
                    for (o, v) in out.iter_mut().zip(vh) {
                        *o += w * *v;
                    }
                }
            }
            let o = linear(&att, p.tensor(lt.wo), p.tensor(lt.bo));
            for (a, b) in x.iter_mut().zip(&o) {
                *a += *b;
            }
            let (h2, _) = layer_norm(&x, p.tensor(lt.ln2_g), p.tensor(lt.ln2_b));
            let g: Vec<T> = linear(&h2, p.tensor(lt.w1), p.tensor(lt.b1)).into_iter().map(gelu).collect();
            let f = linear(&g, p.tensor(lt.w2), p.tensor(lt.b2));
            for (a, b) in x.iter_mut().zip(&f) {
                *a += *b;
            }
        }
        let (xf, _) = layer_norm(&x, p.tensor(lay.lnf_g), p.tensor(lay.lnf_b));
        self.len += 1;
        Ok(output_logits(p, &xf, 1))
    }
}
