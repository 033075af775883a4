//! Forward and backward passes over a packed batch: the valid prefixes of
//! all rows are stacked into one `tokens × d_model` matrix so projections
//! run as single GEMMs, while attention runs per row and head.

use rand::{Rng, RngCore};

use super::linalg::{add_column_sums, add_row_bias, gemm, n, t, Real};
use super::params::{Gradients, LayerTensors, ModelParams};
use super::{Logits, SequenceBatch};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Per row, `heads × len × len` attention probabilities.
    probs: Vec<Vec<T>>,
    att: Vec<T>,
    attn_drop: Option<Vec<T>>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    ffn_drop: Option<Vec<T>>,
}

struct Cache<T> {
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    xf: Vec<T>,
}

/// Row `b` occupies packed rows `offsets[b]..offsets[b] + lengths[b]`.
struct Packing {
    offsets: Vec<usize>,
    lengths: Vec<usize>,
    total: usize,
}

impl Packing {
    fn new(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len());
        let mut total = 0;
        for &len in lengths {
            offsets.push(total);
            total += len;
        }
        Packing {
            offsets,
            lengths: lengths.to_vec(),
            total,
        }
    }

    fn rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().copied().zip(self.lengths.iter().copied())
    }
}

pub(crate) fn layer_norm<T: Real>(x: &[T], g: &[T], b: &[T]) -> (Vec<T>, LnCache<T>) {
    let d = g.len();
    let rows = x.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = g[j] * xh + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates scale/shift gradients and adds the input gradient into `dx`.
fn layer_norm_backward<T: Real>(dy: &[T], cache: &LnCache<T>, g: &[T], dg: &mut [T], db: &mut [T], dx: &mut [T]) {
    let d = g.len();
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for j in 0..d {
            dx[r * d + j] += rs * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
}

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let x3 = x * x * x;
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x3);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let th = (c * (x + a * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// `x · W + b` for `x` with `rows × w_in`, `W` with `w_in × w_out`.
pub(crate) fn linear<T: Real>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let out = b.len();
    let inp = w.len() / out;
    let rows = x.len() / inp;
    let mut y = vec![T::zero(); rows * out];
    gemm(rows, out, inp, T::one(), n(x, inp), n(w, out), T::zero(), &mut y, out);
    add_row_bias(&mut y, b);
    y
}

/// Accumulates `dW`, `db` and returns `dx` for `y = x · W + b`.
fn linear_backward<T: Real>(
    x: &[T],
    dy: &[T],
    w: &[T],
    grads: &mut Gradients<T>,
    w_id: usize,
    b_id: usize,
) -> Vec<T> {
    let out = grads.tensor(b_id).len();
    let inp = w.len() / out;
    let rows = x.len() / inp;
    gemm(inp, out, rows, T::one(), t(x, inp), n(dy, out), T::one(), grads.tensor_mut(w_id), out);
    add_column_sums(grads.tensor_mut(b_id), dy);
    let mut dx = vec![T::zero(); rows * inp];
    gemm(rows, inp, out, T::one(), n(dy, out), t(w, out), T::zero(), &mut dx, inp);
    dx
}

/// In-place row softmax over the lower triangle of an `len × len` block;
/// entries above the diagonal become zero.
pub(crate) fn causal_softmax<T: Real>(s: &mut [T], len: usize) {
    for i in 0..len {
        let row = &mut s[i * len..(i + 1) * len];
        let max = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in &mut row[..=i] {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in &mut row[..=i] {
            *x /= sum;
        }
        for x in &mut row[i + 1..] {
            *x = T::zero();
        }
    }
}

fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= *k;
        }
    }
}

struct Forward<T> {
    /// Packed `tokens × vocab` logits.
    logits: Vec<T>,
    cache: Option<Cache<T>>,
    packing: Packing,
}

fn run_forward<T: Real>(
    p: &ModelParams<T>,
    batch: &SequenceBatch,
    mut rng: Option<&mut dyn RngCore>,
    keep_cache: bool,
) -> Result<Forward<T>> {
    batch.check(&p.config)?;
    let cfg = &p.config;
    let lay = &p.layout;
    let (d, heads, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let rate = cfg.dropout_rate;
    let packing = Packing::new(&batch.lengths);
    let tokens = packing.total;
    let mut dropout = |len: usize| -> Option<Vec<T>> {
        match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(len, rate, r)),
            _ => None,
        }
    };

    let emb = p.tensor(lay.tok_emb);
    let pos = p.tensor(lay.pos_emb);
    let mut x = vec![T::zero(); tokens * d];
    for (b, (off, len)) in packing.rows().enumerate() {
        for (i, &id) in batch.row(b).iter().enumerate() {
            let row = &mut x[(off + i) * d..(off + i + 1) * d];
            let e = &emb[id as usize * d..(id as usize + 1) * d];
            let ps = &pos[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = e[j] + ps[j];
            }
        }
        debug_assert_eq!(batch.row(b).len(), len);
    }
    let emb_drop = dropout(x.len());
    apply_mask(&mut x, &emb_drop);

    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut layers = Vec::with_capacity(lay.layers.len());
    for lt in &lay.layers {
        let (h1, ln1) = layer_norm(&x, p.tensor(lt.ln1_g), p.tensor(lt.ln1_b));
        let q = linear(&h1, p.tensor(lt.wq), p.tensor(lt.bq));
        let k = linear(&h1, p.tensor(lt.wk), p.tensor(lt.bk));
        let v = linear(&h1, p.tensor(lt.wv), p.tensor(lt.bv));
        let mut att = vec![T::zero(); tokens * d];
        let mut probs = Vec::with_capacity(packing.lengths.len());
        for (off, len) in packing.rows() {
            let mut pr = vec![T::zero(); heads * len * len];
            for h in 0..heads {
                let s = &mut pr[h * len * len..(h + 1) * len * len];
                let col = off * d + h * dh;
                gemm(len, len, dh, scale, n(&q[col..], d), t(&k[col..], d), T::zero(), s, len);
                causal_softmax(s, len);
                gemm(len, dh, len, T::one(), n(s, len), n(&v[col..], d), T::zero(), &mut att[col..], d);
            }
            probs.push(pr);
        }
        let mut o = linear(&att, p.tensor(lt.wo), p.tensor(lt.bo));
        let attn_drop = dropout(o.len());
        apply_mask(&mut o, &attn_drop);
        for (a, b) in x.iter_mut().zip(&o) {
            *a += *b;
        }

        let (h2, ln2) = layer_norm(&x, p.tensor(lt.ln2_g), p.tensor(lt.ln2_b));
        let u = linear(&h2, p.tensor(lt.w1), p.tensor(lt.b1));
        let g: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
        let mut f = linear(&g, p.tensor(lt.w2), p.tensor(lt.b2));
        let ffn_drop = dropout(f.len());
        apply_mask(&mut f, &ffn_drop);
        for (a, b) in x.iter_mut().zip(&f) {
            *a += *b;
        }
        if keep_cache {
            layers.push(LayerCache {
                ln1,
                h1,
                q,
                k,
                v,
                probs,
                att,
                attn_drop,
                ln2,
                h2,
                u,
                g,
                ffn_drop,
            });
        }
    }

    let (xf, lnf) = layer_norm(&x, p.tensor(lay.lnf_g), p.tensor(lay.lnf_b));
    let logits = output_logits(p, &xf, tokens);
    Ok(Forward {
        logits,
        cache: keep_cache.then_some(Cache {
            emb_drop,
            layers,
            lnf,
            xf,
        }),
        packing,
    })
}

pub(crate) fn output_logits<T: Real>(p: &ModelParams<T>, xf: &[T], tokens: usize) -> Vec<T> {
    let (d, vocab) = (p.config.d_model, p.config.vocab_size);
    let mut logits = vec![T::zero(); tokens * vocab];
    match p.layout.out_w {
        None => gemm(tokens, vocab, d, T::one(), n(xf, d), t(p.tensor(p.layout.tok_emb), d), T::zero(), &mut logits, vocab),
        Some(w) => gemm(tokens, vocab, d, T::one(), n(xf, d), n(p.tensor(w), vocab), T::zero(), &mut logits, vocab),
    }
    add_row_bias(&mut logits, p.tensor(p.layout.out_b));
    logits
}

/// Logits for every position. Dropout is active only in `train_mode` and
/// draws from `rng`; eval mode is deterministic and ignores it.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    batch: &SequenceBatch,
    train_mode: bool,
    rng: &mut dyn RngCore,
) -> Result<Logits<T>> {
    let fw = run_forward(params, batch, train_mode.then_some(rng), false)?;
    let vocab = params.config.vocab_size;
    let mut data = vec![T::zero(); batch.batch_size() * batch.seq_len * vocab];
    for (b, (off, len)) in fw.packing.rows().enumerate() {
        let dst = b * batch.seq_len * vocab;
        data[dst..dst + len * vocab].copy_from_slice(&fw.logits[off * vocab..(off + len) * vocab]);
    }
    Ok(Logits {
        data,
        batch: batch.batch_size(),
        seq_len: batch.seq_len,
        vocab,
    })
}

/// `-log softmax(row)[target]`, computed in f64.
fn token_nll<T: Real>(row: &[T], target: TokenId) -> f64 {
    let max = row.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x.f64() - max).exp()).sum::<f64>().ln();
    lse - row[target as usize].f64()
}

/// Weighted mean negative log-likelihood, `-(1/Σmask) Σ mask_i log p(x_i | x_<i)`.
pub fn nll_loss<T: Real>(logits: &Logits<T>, batch: &SequenceBatch) -> Result<f64> {
    if logits.batch != batch.batch_size()
        || logits.seq_len != batch.seq_len
        || logits.data.len() != logits.batch * logits.seq_len * logits.vocab
    {
        return Err(Error::Model("logits shape does not match batch".into()));
    }
    for b in 0..batch.batch_size() {
        let mask = batch.row_mask(b);
        if mask.iter().any(|w| !w.is_finite() || *w < 0.0) || mask.first().is_some_and(|&w| w != 0.0) {
            return Err(Error::Model(format!("row {b} has an invalid mask")));
        }
        if let Some(&id) = batch.row(b).iter().find(|&&id| id as usize >= logits.vocab) {
            return Err(Error::Model(format!("target id {id} out of range for {} logits", logits.vocab)));
        }
    }
    let total = batch.mask_total();
    if total <= 0.0 {
        return Err(Error::Model("empty loss mask".into()));
    }
    let mut sum = 0.0;
    for b in 0..batch.batch_size() {
        for (i, &w) in batch.row_mask(b).iter().enumerate() {
            if w > 0.0 {
                sum += w * token_nll(logits.at(b, i - 1), batch.row(b)[i]);
            }
        }
    }
    Ok(sum / total)
}

/// Loss and exact gradients of [`nll_loss`] with respect to every
/// parameter. With `train_mode`, dropout masks are drawn from `rng` and the
/// gradient is that of the sampled sub-network.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    batch: &SequenceBatch,
    train_mode: bool,
    rng: &mut dyn RngCore,
) -> Result<(f64, Gradients<T>)> {
    batch.check(&params.config)?;
    let total = batch.mask_total();
    if total <= 0.0 {
        return Err(Error::Model("empty loss mask".into()));
    }
    let fw = run_forward(params, batch, train_mode.then_some(rng), true)?;
    let cache = fw.cache.as_ref().expect("cache requested");
    let vocab = params.config.vocab_size;

    // dL/dlogits: (softmax - onehot) * w / total on every predicting row.
    let mut dlogits = vec![T::zero(); fw.logits.len()];
    let mut loss = 0.0;
    for (b, (off, _)) in fw.packing.rows().enumerate() {
        let ids = batch.row(b);
        for (i, &w) in batch.row_mask(b).iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            let r = (off + i - 1) * vocab;
            let row = &fw.logits[r..r + vocab];
            loss += w * token_nll(row, ids[i]);
            let max = row.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x.f64() - max).exp()).sum();
            let c = w / total;
            for (j, x) in row.iter().enumerate() {
                let mut gj = (x.f64() - max).exp() / z;
                if j == ids[i] as usize {
                    gj -= 1.0;
                }
                dlogits[r + j] = T::of(gj * c);
            }
        }
    }
    let grads = backprop(params, batch, &fw, cache, &dlogits);
    Ok((loss / total, grads))
}

/// Eval-mode gradients of [`nll_loss`].
pub fn backward<T: Real>(params: &ModelParams<T>, batch: &SequenceBatch) -> Result<Gradients<T>> {
    let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    loss_and_grads(params, batch, false, &mut unused).map(|(_, g)| g)
}

fn backprop<T: Real>(
    p: &ModelParams<T>,
    batch: &SequenceBatch,
    fw: &Forward<T>,
    cache: &Cache<T>,
    dlogits: &[T],
) -> Gradients<T> {
    let cfg = &p.config;
    let lay = &p.layout;
    let (d, heads, dh, vocab) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.vocab_size);
    let tokens = fw.packing.total;
    let mut grads = p.zeros_like();

    add_column_sums(grads.tensor_mut(lay.out_b), dlogits);
    let mut dxf = vec![T::zero(); tokens * d];
    match lay.out_w {
        None => {
            let e = p.tensor(lay.tok_emb);
            gemm(vocab, d, tokens, T::one(), t(dlogits, vocab), n(&cache.xf, d), T::one(), grads.tensor_mut(lay.tok_emb), d);
            gemm(tokens, d, vocab, T::one(), n(dlogits, vocab), n(e, d), T::zero(), &mut dxf, d);
        }
        Some(w) => {
            gemm(d, vocab, tokens, T::one(), t(&cache.xf, d), n(dlogits, vocab), T::one(), grads.tensor_mut(w), vocab);
            gemm(tokens, d, vocab, T::one(), n(dlogits, vocab), t(p.tensor(w), vocab), T::zero(), &mut dxf, d);
        }
    }
    let mut dx = vec![T::zero(); tokens * d];
    {
        let (mut dg, mut db) = (vec![T::zero(); d], vec![T::zero(); d]);
        layer_norm_backward(&dxf, &cache.lnf, p.tensor(lay.lnf_g), &mut dg, &mut db, &mut dx);
        add_into(grads.tensor_mut(lay.lnf_g), &dg);
        add_into(grads.tensor_mut(lay.lnf_b), &db);
    }

    let scale = T::of(1.0 / (dh as f64).sqrt());
    for (lt, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        let lt: &LayerTensors = lt;
        // Feed-forward branch.
        let mut df = dx.clone();
        apply_mask(&mut df, &lc.ffn_drop);
        let mut du = linear_backward(&lc.g, &df, p.tensor(lt.w2), &mut grads, lt.w2, lt.b2);
        for (g, &u) in du.iter_mut().zip(&lc.u) {
            *g *= gelu_grad(u);
        }
        let dh2 = linear_backward(&lc.h2, &du, p.tensor(lt.w1), &mut grads, lt.w1, lt.b1);
        ln_back_into(&dh2, &lc.ln2, p, &mut grads, lt.ln2_g, lt.ln2_b, &mut dx);

        // Attention branch.
        let mut dout = dx.clone();
        apply_mask(&mut dout, &lc.attn_drop);
        let datt = linear_backward(&lc.att, &dout, p.tensor(lt.wo), &mut grads, lt.wo, lt.bo);
        let mut dq = vec![T::zero(); tokens * d];
        let mut dk = vec![T::zero(); tokens * d];
        let mut dv = vec![T::zero(); tokens * d];
        for ((off, len), pr) in fw.packing.rows().zip(&lc.probs) {
            let mut ds = vec![T::zero(); len * len];
            for h in 0..heads {
                let ph = &pr[h * len * len..(h + 1) * len * len];
                let col = off * d + h * dh;
                gemm(len, len, dh, T::one(), n(&datt[col..], d), t(&lc.v[col..], d), T::zero(), &mut ds, len);
                gemm(len, dh, len, T::one(), t(ph, len), n(&datt[col..], d), T::zero(), &mut dv[col..], d);
                for i in 0..len {
                    let prow = &ph[i * len..(i + 1) * len];
                    let drow = &mut ds[i * len..(i + 1) * len];
                    let dot: T = (0..=i).map(|j| prow[j] * drow[j]).sum();
                    for j in 0..=i {
                        drow[j] = prow[j] * (drow[j] - dot);
                    }
                    for x in &mut drow[i + 1..] {
                        *x = T::zero();
                    }
                }
                gemm(len, dh, len, scale, n(&ds, len), n(&lc.k[col..], d), T::zero(), &mut dq[col..], d);
                gemm(len, dh, len, scale, t(&ds, len), n(&lc.q[col..], d), T::zero(), &mut dk[col..], d);
            }
        }
        let mut dh1 = linear_backward(&lc.h1, &dq, p.tensor(lt.wq), &mut grads, lt.wq, lt.bq);
        add_into(&mut dh1, &linear_backward(&lc.h1, &dk, p.tensor(lt.wk), &mut grads, lt.wk, lt.bk));
        add_into(&mut dh1, &linear_backward(&lc.h1, &dv, p.tensor(lt.wv), &mut grads, lt.wv, lt.bv));
        ln_back_into(&dh1, &lc.ln1, p, &mut grads, lt.ln1_g, lt.ln1_b, &mut dx);
    }

    apply_mask(&mut dx, &cache.emb_drop);
    for (b, (off, _)) in fw.packing.rows().enumerate() {
        for (i, &id) in batch.row(b).iter().enumerate() {
            let src = &dx[(off + i) * d..(off + i + 1) * d];
            let e = &mut grads.tensor_mut(lay.tok_emb)[id as usize * d..(id as usize + 1) * d];
            add_into(e, src);
            let ps = &mut grads.tensor_mut(lay.pos_emb)[i * d..(i + 1) * d];
            add_into(ps, src);
        }
    }
    grads
}

fn add_into<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += *b;
    }
}

#[allow(clippy::too_many_arguments)]
fn ln_back_into<T: Real>(
    dy: &[T],
    cache: &LnCache<T>,
    p: &ModelParams<T>,
    grads: &mut Gradients<T>,
    g_id: usize,
    b_id: usize,
    dx: &mut [T],
) {
    let d = p.config.d_model;
    let (mut dg, mut db) = (vec![T::zero(); d], vec![T::zero(); d]);
    layer_norm_backward(dy, cache, p.tensor(g_id), &mut dg, &mut db, dx);
    add_into(grads.tensor_mut(g_id), &dg);
    add_into(grads.tensor_mut(b_id), &db);
}
