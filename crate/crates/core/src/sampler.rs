//! Prompt construction and truncated top-k decoding.
//!
//! Decoding applies no form constraints: the body is whatever the model
//! emits until EOS, and conformance is judged afterwards by the validator.

use std::collections::HashSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{deserialize, markers_for, FormCatalog, Poem, MARKERS};
use crate::error::{Error, Result};
use crate::model::{Decoder, ModelParams, Real};
use crate::tokenizer::{decode, encode, TokenId, Vocab, BOS, EOS, PAD, UNK};
use crate::validator::{validate, PhonologyTable, ValidateOptions, ValidationReport};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub k: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Token ids that are never sampled.
    pub forbid: HashSet<TokenId>,
}

impl SampleConfig {
    /// k = 20, temperature 1, PAD/BOS/UNK and the identifier markers
    /// forbidden.
    pub fn new(vocab: &Vocab, seed: u64) -> Self {
        SampleConfig {
            k: DEFAULT_K,
            temperature: 1.0,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed,
            forbid: default_forbidden(vocab),
        }
    }

    pub fn check(&self, vocab_size: usize) -> Result<()> {
        if self.k == 0 || self.k > vocab_size {
            return Err(Error::Sampling(format!("k must be in 1..={vocab_size}, got {}", self.k)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Sampling(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

pub fn default_forbidden(vocab: &Vocab) -> HashSet<TokenId> {
    [PAD, BOS, UNK].into_iter().chain(vocab.marker_ids()).collect()
}

/// Token ids of `form (id1) theme (id2)`, the text that precedes a body.
/// Acrostic prompts carry the head characters as theme.
pub fn build_prompt(
    form_id: &str,
    theme: &str,
    acrostic: bool,
    catalog: &FormCatalog,
    vocab: &Vocab,
) -> Result<Vec<TokenId>> {
    Ok(encode(&prompt_text(form_id, theme, acrostic, catalog)?, vocab))
}

pub fn prompt_text(form_id: &str, theme: &str, acrostic: bool, catalog: &FormCatalog) -> Result<String> {
    let spec = catalog
        .resolve(form_id)
        .ok_or_else(|| Error::UnknownForm(form_id.to_string()))?;
    if let Some(m) = MARKERS.iter().find(|m| theme.contains(**m)) {
        return Err(Error::Sampling(format!("theme `{theme}` contains marker {m}")));
    }
    let (id1, id2) = markers_for(spec.class, acrostic);
    Ok(format!("{form_id}{id1}{theme}{id2}"))
}

/// The top-k candidates and their renormalized probabilities, highest first.
/// Ties in logit go to the lower id.
pub fn candidate_distribution<T: Real>(logits: &[T], cfg: &SampleConfig) -> Result<Vec<(TokenId, f64)>> {
    cfg.check(logits.len())?;
    let mut allowed: Vec<(TokenId, f64)> = logits
        .iter()
        .enumerate()
        .map(|(i, l)| (i as TokenId, l.f64()))
        .filter(|(i, _)| !cfg.forbid.contains(i))
        .collect();
    if allowed.is_empty() {
        return Err(Error::Sampling("every token is masked".into()));
    }
    if let Some((i, l)) = allowed.iter().find(|(_, l)| !l.is_finite()) {
        return Err(Error::Sampling(format!("non-finite logit {l} for token {i}")));
    }
    allowed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    allowed.truncate(cfg.k);
    let max = allowed[0].1;
    let weights: Vec<f64> = allowed.iter().map(|(_, l)| ((l - max) / cfg.temperature).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(allowed.iter().zip(weights).map(|((id, _), w)| (*id, w / z)).collect())
}

pub fn top_k_sample<T: Real>(logits: &[T], cfg: &SampleConfig, rng: &mut dyn RngCore) -> Result<TokenId> {
    let dist = candidate_distribution(logits, cfg)?;
    if dist.len() == 1 {
        return Ok(dist[0].0);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, p) in &dist {
        acc += p;
        if u < acc {
            return Ok(id);
        }
    }
    Ok(dist.last().expect("non-empty").0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Generation {
    /// Body tokens, excluding EOS.
    pub tokens: Vec<TokenId>,
    /// Stopped by the token budget or the context length rather than EOS.
    pub truncated: bool,
}

/// Decodes after BOS + `prompt` until EOS, `max_new_tokens`, or the end of
/// the context window.
pub fn generate<T: Real>(params: &ModelParams<T>, prompt: &[TokenId], cfg: &SampleConfig) -> Result<Generation> {
    cfg.check(params.config.vocab_size)?;
    if prompt.len() + 1 > params.config.context_len {
        return Err(Error::Sampling(format!(
            "prompt of {} tokens does not fit context {}",
            prompt.len() + 1,
            params.config.context_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dec = Decoder::new(params);
    let mut logits = dec.push(BOS)?;
    for &id in prompt {
        logits = dec.push(id)?;
    }
    let mut tokens = Vec::new();
    loop {
        if tokens.len() >= cfg.max_new_tokens {
            return Ok(Generation { tokens, truncated: true });
        }
        let next = top_k_sample(&logits, cfg, &mut rng)?;
        if next == EOS {
            return Ok(Generation { tokens, truncated: false });
        }
        tokens.push(next);
        if dec.is_full() {
            return Ok(Generation { tokens, truncated: true });
        }
        logits = dec.push(next)?;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub seed: u64,
    pub body: String,
    pub truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub poem: Option<Poem>,
}

impl Candidate {
    pub fn well_formed(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.well_formed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    pub form_id: String,
    pub theme: String,
    pub candidates: Vec<Candidate>,
    /// Well-formed candidates over all candidates; 0 for an empty batch.
    pub well_formed_fraction: f64,
}

/// Everything [`generate_batch`] needs besides the model.
pub struct BatchContext<'a> {
    pub catalog: &'a FormCatalog,
    pub vocab: &'a Vocab,
    pub table: &'a PhonologyTable,
    pub validate: ValidateOptions,
}

/// Draws `n` candidates with seeds derived from `cfg.seed` and validates
/// each. Per-candidate failures are recorded, never raised.
pub fn generate_batch<T: Real>(
    params: &ModelParams<T>,
    form_id: &str,
    theme: &str,
    acrostic: bool,
    n: usize,
    cfg: &SampleConfig,
    ctx: &BatchContext<'_>,
) -> Result<BatchReport> {
    let prefix = prompt_text(form_id, theme, acrostic, ctx.catalog)?;
    let prompt = encode(&prefix, ctx.vocab);
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut candidates = Vec::with_capacity(n);
    for _ in 0..n {
        let seed = seeds.next_u64();
        let mut c = Candidate {
            seed,
            body: String::new(),
            truncated: false,
            report: None,
            error: None,
            poem: None,
        };
        let run = SampleConfig { seed, ..cfg.clone() };
        let outcome = generate(params, &prompt, &run).and_then(|g| {
            c.truncated = g.truncated;
            c.body = decode(&g.tokens, ctx.vocab)?;
            let poem = deserialize(&format!("{prefix}{}", c.body), ctx.catalog)?;
            let report = validate(&poem, ctx.catalog, ctx.table, ctx.validate)?;
            Ok((poem, report))
        });
        match outcome {
            Ok((poem, report)) => {
                c.poem = Some(poem);
                c.report = Some(report);
            }
            Err(e) => c.error = Some(e.to_string()),
        }
        candidates.push(c);
    }
    let good = candidates.iter().filter(|c| c.well_formed()).count();
    let well_formed_fraction = if n == 0 { 0.0 } else { good as f64 / n as f64 };
    Ok(BatchReport {
        form_id: form_id.to_string(),
        theme: theme.to_string(),
        candidates,
        well_formed_fraction,
    })
}
