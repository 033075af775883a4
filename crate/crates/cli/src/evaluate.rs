use std::path::PathBuf;

use clap::Args;
use guti_core::corpus::{deserialize, Field};
use guti_core::sampler::{generate, SampleConfig};
use guti_core::tokenizer::{decode, encode};
use guti_core::trainer::{encode_corpus, evaluate_nll, novelty_score, split_heldout, CorpusIndex};

use crate::fail::CmdResult;
use crate::store;
use crate::Common;

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model directory written by `guti train`.
    pub model: PathBuf,
    /// Dataset directory written by `guti ingest`.
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// The held-out fraction used in training, to report both splits.
    #[arg(long, default_value_t = 0.05)]
    pub heldout_fraction: f64,
    /// Training prompts decoded greedily for the novelty score.
    #[arg(long, default_value_t = 8)]
    pub probes: usize,
}

pub fn run(args: &EvaluateArgs, common: &Common) -> CmdResult {
    let catalog = store::catalog(common)?;
    let (params, vocab) = store::read_model(&args.model, args.checkpoint.as_ref())?;
    let (samples, _) = store::read_dataset(&args.dataset)?;
    let ctx = params.config.context_len;
    let (train, heldout) = split_heldout(&samples, args.heldout_fraction);
    let nll = |part: &[&_]| -> CmdResult<Option<f64>> {
        if part.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate_nll(&params, &encode_corpus(part, &vocab, ctx)?, 16)?))
    };
    let train_nll = nll(&train)?;
    let heldout_nll = nll(&heldout)?;

    let poems = train.iter().map(|s| deserialize(&s.text, &catalog)).collect::<Result<Vec<_>, _>>()?;
    let index = CorpusIndex::build(&poems);
    let mut cfg = SampleConfig::new(&vocab, 0);
    cfg.k = 1;
    cfg.max_new_tokens = ctx;
    let mut scores = Vec::new();
    for s in train.iter().take(args.probes) {
        let prefix: String = s.text.chars().take(s.span(Field::Id2).end).collect();
        let g = generate(&params, &encode(&prefix, &vocab), &cfg)?;
        let text = format!("{prefix}{}", decode(&g.tokens, &vocab)?);
        let score = deserialize(&text, &catalog)
            .and_then(|p| novelty_score(&p, &index))
            .map_or(1.0, |n| n.score);
        scores.push(score);
    }
    let novelty = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    let summary = serde_json::json!({
        "train_nll": train_nll,
        "heldout_nll": heldout_nll,
        "train_samples": train.len(),
        "heldout_samples": heldout.len(),
        "greedy_novelty": novelty,
        "probes": scores.len(),
    });
    if common.json {
        store::emit(&summary.to_string());
    } else {
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        store::emit(&format!("train NLL    {} ({} samples)", show(train_nll), train.len()));
        store::emit(&format!("held-out NLL {} ({} samples)", show(heldout_nll), heldout.len()));
        store::emit(&format!("greedy novelty {} over {} prompts", show(novelty), scores.len()));
    }
    Ok(())
}
