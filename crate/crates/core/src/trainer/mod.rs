//! Adam training loop with warmup, held-out evaluation, checkpointing and a
//! novelty probe that measures how much the model copies corpus lines.

mod adam;
mod novelty;

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use novelty::{novelty_score, CorpusIndex, Novelty, NGRAM};

use crate::corpus::{deserialize, Field, FormCatalog, SerializedSample};
use crate::error::{Error, Result};
use crate::model::{forward, loss_and_grads, nll_loss, save_checkpoint, ModelParams, SequenceBatch};
use crate::sampler::{generate, SampleConfig};
use crate::tokenizer::{decode, encode, encode_sample, TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Linear warmup from 0 to the full learning rate.
    pub warmup_steps: usize,
    /// Steps between metric records.
    pub log_interval: usize,
    /// Steps between checkpoints; 0 disables.
    pub checkpoint_interval: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
    /// Steps between novelty probes; 0 disables.
    pub novelty_eval_interval: usize,
    /// Training prompts decoded greedily per probe.
    pub novelty_probes: usize,
    /// Stop once mean probe novelty falls below this value.
    pub early_stop_novelty: Option<f64>,
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamConfig::default(),
            batch_size: 16,
            max_steps: 2000,
            warmup_steps: 100,
            log_interval: 100,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            seed: 0,
            novelty_eval_interval: 0,
            novelty_probes: 8,
            early_stop_novelty: None,
            heldout_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        self.optimizer.check()?;
        if self.batch_size == 0 {
            return Err(Error::Training("batch_size must be at least 1".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Training("log_interval must be at least 1".into()));
        }
        if self.checkpoint_interval > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Training("checkpoint_interval set without checkpoint_dir".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Training("heldout_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Learning rate at 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let lr = self.optimizer.learning_rate;
        if self.warmup_steps == 0 {
            lr
        } else {
            lr * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Held-out membership by hash of the source id (the text when absent), so
/// the split is stable without storing it.
pub fn is_heldout(sample: &SerializedSample, fraction: f64) -> bool {
    let key = sample.source_id.as_deref().unwrap_or(&sample.text);
    (fnv1a(key.as_bytes()) % 10_000) < (fraction * 10_000.0).round() as u64
}

pub fn split_heldout(corpus: &[SerializedSample], fraction: f64) -> (Vec<&SerializedSample>, Vec<&SerializedSample>) {
    corpus.iter().partition(|s| !is_heldout(s, fraction))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalMetrics {
    pub step: usize,
    pub learning_rate: f64,
    /// Mean training loss over the steps since the previous record.
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub novelty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps_run: usize,
    /// Training loss of every completed step.
    pub step_losses: Vec<f64>,
    pub intervals: Vec<IntervalMetrics>,
    pub checkpoints: Vec<PathBuf>,
    /// Steps skipped because of a non-finite loss or gradient.
    pub aborted_steps: Vec<usize>,
    pub early_stopped: bool,
    pub train_sequences: usize,
    pub heldout_sequences: usize,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// One JSON object per metric record. Wall-clock time is left out so
    /// that identical runs produce identical output.
    pub fn metrics_jsonl(&self) -> String {
        self.intervals
            .iter()
            .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
            .collect()
    }
}

/// Mean per-token NLL in eval mode over `seqs`, evaluated in chunks.
pub fn evaluate_nll(params: &ModelParams<f32>, seqs: &[Vec<TokenId>], chunk: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for part in seqs.chunks(chunk.max(1)) {
        let batch = SequenceBatch::from_sequences(part);
        let w = batch.mask_total();
        if w == 0.0 {
            continue;
        }
        let logits = forward(params, &batch, false, &mut rng)?;
        sum += nll_loss(&logits, &batch)? * w;
        count += w;
    }
    if count == 0.0 {
        return Err(Error::Training("no tokens to evaluate".into()));
    }
    Ok(sum / count)
}

/// Encodes samples as BOS + text + EOS and checks they fit the context.
pub fn encode_corpus(samples: &[&SerializedSample], vocab: &Vocab, context_len: usize) -> Result<Vec<Vec<TokenId>>> {
    samples
        .iter()
        .map(|s| {
            let ids = encode_sample(s, vocab);
            if ids.len() > context_len {
                Err(Error::Training(format!(
                    "sequence of {} tokens exceeds context {context_len}: {}",
                    ids.len(),
                    s.text
                )))
            } else {
                Ok(ids)
            }
        })
        .collect()
}

struct Probe<'a> {
    index: CorpusIndex,
    prompts: Vec<(String, Vec<TokenId>)>,
    vocab: &'a Vocab,
    catalog: &'a FormCatalog,
}

impl Probe<'_> {
    /// Mean novelty of greedy generations; undecodable output counts as
    /// fully novel.
    fn run(&self, params: &ModelParams<f32>) -> Result<f64> {
        let mut cfg = SampleConfig::new(self.vocab, 0);
        cfg.k = 1;
        cfg.max_new_tokens = params.config.context_len;
        let mut total = 0.0;
        for (prefix, prompt) in &self.prompts {
            let g = generate(params, prompt, &cfg)?;
            let text = format!("{prefix}{}", decode(&g.tokens, self.vocab)?);
            total += match deserialize(&text, self.catalog) {
                Ok(poem) => novelty_score(&poem, &self.index).map_or(1.0, |n| n.score),
                Err(_) => 1.0,
            };
        }
        Ok(total / self.prompts.len().max(1) as f64)
    }
}

/// Trains `params` in place on the non-held-out part of `corpus`.
pub fn fine_tune(
    corpus: &[SerializedSample],
    vocab: &Vocab,
    catalog: &FormCatalog,
    params: &mut ModelParams<f32>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let started = Instant::now();
    cfg.check()?;
    if corpus.is_empty() {
        return Err(Error::Training("empty corpus".into()));
    }
    let (train_samples, heldout_samples) = split_heldout(corpus, cfg.heldout_fraction);
    if train_samples.is_empty() {
        return Err(Error::Training("no training sequences after the held-out split".into()));
    }
    let ctx = params.config.context_len;
    let train = encode_corpus(&train_samples, vocab, ctx)?;
    let heldout = encode_corpus(&heldout_samples, vocab, ctx)?;

    let probe = if cfg.novelty_eval_interval > 0 {
        let poems: Vec<_> = train_samples
            .iter()
            .map(|s| deserialize(&s.text, catalog))
            .collect::<Result<_>>()?;
        let prompts = train_samples
            .iter()
            .take(cfg.novelty_probes)
            .map(|s| {
                let prefix: String = s.text.chars().take(s.span(Field::Id2).end).collect();
                let ids = encode(&prefix, vocab);
                (prefix, ids)
            })
            .collect();
        Some(Probe {
            index: CorpusIndex::build(&poems),
            prompts,
            vocab,
            catalog,
        })
    } else {
        None
    };

    if let Some(dir) = &cfg.checkpoint_dir {
        if cfg.checkpoint_interval > 0 {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }

    let mut report = TrainReport {
        steps_run: 0,
        step_losses: Vec::new(),
        intervals: Vec::new(),
        checkpoints: Vec::new(),
        aborted_steps: Vec::new(),
        early_stopped: false,
        train_sequences: train.len(),
        heldout_sequences: heldout.len(),
        wall_clock_secs: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = Vec::new();
    let mut since_record: Vec<f64> = Vec::new();

    for step in 1..=cfg.max_steps {
        let mut rows = Vec::with_capacity(cfg.batch_size);
        while rows.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            rows.push(train[order.pop().expect("refilled")].clone());
        }
        let batch = SequenceBatch::from_sequences(&rows);
        let lr = cfg.lr_at(step);
        let (loss, grads) = loss_and_grads(params, &batch, true, &mut rng)?;
        let applied = loss.is_finite() && adam_step(&mut params.data, &grads.data, &mut state, &cfg.optimizer, lr).is_ok();
        report.steps_run = step;
        if applied {
            report.step_losses.push(loss);
            since_record.push(loss);
        } else {
            report.aborted_steps.push(step);
        }

        let log_due = step % cfg.log_interval == 0 || step == cfg.max_steps;
        let novelty_due = probe.is_some() && step % cfg.novelty_eval_interval == 0;
        if log_due || novelty_due {
            let novelty = match (&probe, novelty_due) {
                (Some(p), true) => Some(p.run(params)?),
                _ => None,
            };
            let heldout_loss = if heldout.is_empty() {
                None
            } else {
                Some(evaluate_nll(params, &heldout, cfg.batch_size)?)
            };
            let mean_loss = if since_record.is_empty() {
                f64::NAN
            } else {
                since_record.iter().sum::<f64>() / since_record.len() as f64
            };
            since_record.clear();
            report.intervals.push(IntervalMetrics {
                step,
                learning_rate: lr,
                mean_loss,
                heldout_loss,
                novelty,
            });
            if let (Some(n), Some(limit)) = (novelty, cfg.early_stop_novelty) {
                if n < limit {
                    report.early_stopped = true;
                }
            }
        }

        if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
            let dir = cfg.checkpoint_dir.as_ref().expect("checked");
            let path = dir.join(format!("step-{step:06}.ckpt"));
            save_checkpoint(params, &path)?;
            report.checkpoints.push(path);
        }
        if report.early_stopped {
            break;
        }
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{serialize, Poem};
    use crate::model::{init_params, ModelConfig};
    use crate::tokenizer::build_vocab;

    fn corpus() -> Vec<SerializedSample> {
        let c = FormCatalog::builtin();
        [
            ("静夜思", "床前明月光，疑是地上霜。举头望明月，低头思故乡。"),
            ("登鹳雀楼", "白日依山尽，黄河入海流。欲穷千里目，更上一层楼。"),
            ("春晓", "春眠不觉晓，处处闻啼鸟。夜来风雨声，花落知多少。"),
        ]
        .iter()
        .enumerate()
        .map(|(i, (t, b))| serialize(&Poem::new("五绝", *t, b).unwrap().with_source(format!("p{i}")), &c).unwrap())
        .collect()
    }

    fn small_model(vocab: &Vocab) -> ModelParams<f32> {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            context_len: 40,
            vocab_size: vocab.len(),
            dropout_rate: 0.0,
            tie_embeddings: true,
        };
        init_params(&cfg, 1).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            max_steps: 30,
            warmup_steps: 5,
            log_interval: 10,
            heldout_fraction: 0.0,
            optimizer: AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let c = corpus();
        let v = build_vocab(&c, 1).unwrap();
        let mut p = small_model(&v);
        let before = p.clone();
        let cfg = TrainConfig {
            max_steps: 0,
            ..quick_cfg()
        };
        let r = fine_tune(&c, &v, &FormCatalog::builtin(), &mut p, &cfg).unwrap();
        assert_eq!(p, before);
        assert!(r.step_losses.is_empty() && r.intervals.is_empty());
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let c = corpus();
        let v = build_vocab(&c, 1).unwrap();
        let cat = FormCatalog::builtin();
        let mut a = small_model(&v);
        let mut b = small_model(&v);
        let ra = fine_tune(&c, &v, &cat, &mut a, &quick_cfg()).unwrap();
        let rb = fine_tune(&c, &v, &cat, &mut b, &quick_cfg()).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(ra.metrics_jsonl(), rb.metrics_jsonl());
        assert_eq!(ra.intervals.len(), 3);
        assert!(ra.intervals[2].mean_loss < ra.intervals[0].mean_loss);
    }

    #[test]
    fn checkpoints_and_novelty_probe() {
        let c = corpus();
        let v = build_vocab(&c, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut p = small_model(&v);
        let cfg = TrainConfig {
            max_steps: 20,
            checkpoint_interval: 10,
            checkpoint_dir: Some(dir.path().join("ck")),
            novelty_eval_interval: 10,
            novelty_probes: 2,
            early_stop_novelty: Some(1.1),
            ..quick_cfg()
        };
        let r = fine_tune(&c, &v, &FormCatalog::builtin(), &mut p, &cfg).unwrap();
        // Any novelty is below 1.1, so the first probe stops training.
        assert!(r.early_stopped);
        assert_eq!(r.steps_run, 10);
        assert_eq!(r.checkpoints.len(), 1);
        assert!(r.checkpoints[0].exists());
        let n = r.intervals[0].novelty.unwrap();
        assert!((0.0..=1.0).contains(&n));
    }

    #[test]
    fn config_and_input_errors() {
        let c = corpus();
        let v = build_vocab(&c, 1).unwrap();
        let cat = FormCatalog::builtin();
        let mut p = small_model(&v);
        assert!(fine_tune(&[], &v, &cat, &mut p, &quick_cfg()).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..quick_cfg()
        };
        assert!(fine_tune(&c, &v, &cat, &mut p, &bad).is_err());
        let bad = TrainConfig {
            checkpoint_interval: 5,
            ..quick_cfg()
        };
        assert!(bad.check().is_err());
        let mut short = small_model(&v);
        short.config.context_len = 10;
        let short = init_params::<f32>(&short.config, 1).unwrap();
        let mut s = short;
        assert!(fine_tune(&c, &v, &cat, &mut s, &quick_cfg()).is_err());
    }

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig::default();
        assert!((cfg.lr_at(1) - 3e-6).abs() < 1e-18);
        assert!((cfg.lr_at(50) - 1.5e-4).abs() < 1e-15);
        assert_eq!(cfg.lr_at(100), 3e-4);
        assert_eq!(cfg.lr_at(5000), 3e-4);
    }

    #[test]
    fn heldout_split_is_deterministic_and_roughly_sized() {
        let c = FormCatalog::builtin();
        let samples: Vec<_> = (0..2000)
            .map(|i| serialize(&Poem::new("五绝", "t", "床前明月光").unwrap().with_source(format!("s{i}")), &c).unwrap())
            .collect();
        let (train, held) = split_heldout(&samples, 0.05);
        assert_eq!(train.len() + held.len(), 2000);
        assert!((60..140).contains(&held.len()), "{}", held.len());
        let (_, again) = split_heldout(&samples, 0.05);
        assert_eq!(held, again);
        assert!(split_heldout(&samples, 0.0).1.is_empty());
    }
}
