use std::path::PathBuf;

use clap::Args;
use guti_core::corpus::{acrostic_transform, ingest_corpus, serialize, IngestOptions};
use guti_core::tokenizer::build_vocab;
use guti_core::validator::FormClass;

use crate::fail::{user, CmdResult, Context};
use crate::store;
use crate::Common;

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// JSONL corpus: `{form, theme, body}` poems or `{first, second}` couplets.
    pub corpus: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Follow every poem with an acrostic copy whose theme is its line heads.
    #[arg(long)]
    pub acrostic: bool,
    /// Keep only couplet records.
    #[arg(long, conflicts_with = "no_couplets")]
    pub couplets_only: bool,
    /// Drop couplet records.
    #[arg(long)]
    pub no_couplets: bool,
    /// Characters seen fewer times become [UNK].
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Skip records longer than this many tokens, BOS and EOS included.
    #[arg(long, default_value_t = 256)]
    pub max_tokens: usize,
}

pub fn run(args: &IngestArgs, common: &Common) -> CmdResult {
    let catalog = store::catalog(common)?;
    let opts = IngestOptions {
        max_tokens: Some(args.max_tokens),
    };
    let outcome = ingest_corpus(&args.corpus, &catalog, &opts)
        .user_ctx(|| format!("reading corpus {}", args.corpus.display()))?;
    for d in &outcome.diagnostics {
        eprintln!("{}:{}: skipped: {}", args.corpus.display(), d.line, d.message);
    }
    let is_couplet = |form: &str| catalog.resolve(form).is_some_and(|s| s.class == FormClass::Couplet);
    let poems: Vec<_> = outcome
        .poems
        .into_iter()
        .filter(|p| {
            let c = is_couplet(&p.form_id);
            !(args.couplets_only && !c || args.no_couplets && c)
        })
        .collect();
    if poems.is_empty() {
        return Err(user(format!("no usable records in {}", args.corpus.display())));
    }
    let mut samples = Vec::new();
    let mut acrostic = 0;
    for p in &poems {
        samples.push(serialize(p, &catalog)?);
        if args.acrostic && !is_couplet(&p.form_id) {
            samples.push(serialize(&acrostic_transform(p, &catalog)?, &catalog)?);
            acrostic += 1;
        }
    }
    let vocab = build_vocab(&samples, args.min_count)?;
    store::write_dataset(&args.out, &samples, &vocab)?;
    let summary = serde_json::json!({
        "records": outcome.records,
        "poems": poems.len(),
        "skipped": outcome.diagnostics.len(),
        "acrostic_copies": acrostic,
        "samples": samples.len(),
        "vocab_size": vocab.len(),
        "out": args.out,
    });
    if common.json {
        store::emit(&summary.to_string());
    } else {
        eprintln!(
            "{} records, {} skipped, {} samples ({acrostic} acrostic), vocab {} -> {}",
            outcome.records,
            outcome.diagnostics.len(),
            samples.len(),
            vocab.len(),
            args.out.display()
        );
    }
    Ok(())
}
