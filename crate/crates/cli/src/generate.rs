use std::path::PathBuf;

use clap::Args;
use guti_core::sampler::{generate_batch, prompt_text, BatchContext, SampleConfig};
use guti_core::tokenizer::{encode, UNK};
use guti_core::validator::ValidateOptions;

use crate::fail::{user, CmdResult};
use crate::store;
use crate::{resolve_seed, Common};

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("subject").required(true).args(["theme", "acrostic"]))]
pub struct GenerateArgs {
    /// Model directory written by `guti train`.
    pub model: PathBuf,
    /// Use this checkpoint instead of `<model>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Form id or alias from the catalog.
    #[arg(long)]
    pub form: String,
    #[arg(long)]
    pub theme: Option<String>,
    /// Characters to place at the line heads.
    #[arg(long)]
    pub acrostic: Option<String>,
    /// Number of candidates.
    #[arg(short, long, default_value_t = 1)]
    pub n: usize,
    /// Sample among the k most likely tokens.
    #[arg(short, long, default_value_t = guti_core::sampler::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = guti_core::sampler::DEFAULT_MAX_NEW_TOKENS)]
    pub max_new_tokens: usize,
    /// Random when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Treat rhyme and tone failures as ill-formed.
    #[arg(long)]
    pub strict_phonology: bool,
}

pub fn run(args: &GenerateArgs, common: &Common) -> CmdResult {
    let catalog = store::catalog(common)?;
    if catalog.resolve(&args.form).is_none() {
        let forms: Vec<_> = catalog.form_ids().collect();
        return Err(user(format!("unknown form `{}`; known forms: {}", args.form, forms.join(" "))));
    }
    let table = store::phonology(common)?;
    let (params, vocab) = store::read_model(&args.model, args.checkpoint.as_ref())?;
    let seed = resolve_seed(args.seed);
    let cfg = SampleConfig {
        k: args.k,
        temperature: args.temperature,
        max_new_tokens: args.max_new_tokens,
        ..SampleConfig::new(&vocab, seed)
    };
    cfg.check(vocab.len())?;
    let (theme, acrostic) = match (&args.theme, &args.acrostic) {
        (_, Some(heads)) => (heads.as_str(), true),
        (Some(theme), None) => (theme.as_str(), false),
        (None, None) => unreachable!("clap requires one"),
    };
    let prompt = prompt_text(&args.form, theme, acrostic, &catalog)?;
    let unknown = encode(&prompt, &vocab).iter().filter(|&&t| t == UNK).count();
    if unknown > 0 {
        eprintln!("warning: {unknown} prompt characters are not in the vocabulary");
    }
    if args.n == 0 {
        return Ok(());
    }
    let ctx = BatchContext {
        catalog: &catalog,
        vocab: &vocab,
        table: &table,
        validate: ValidateOptions {
            strict_phonology: args.strict_phonology,
        },
    };
    let batch = generate_batch(&params, &args.form, theme, acrostic, args.n, &cfg, &ctx)?;
    for (i, c) in batch.candidates.iter().enumerate() {
        if common.json {
            let record = serde_json::json!({
                "index": i,
                "form": &args.form,
                "theme": theme,
                "acrostic": acrostic,
                "well_formed": c.well_formed(),
                "candidate": c,
            });
            store::emit(&record.to_string());
            continue;
        }
        store::emit(&format!("# {} seed={} well_formed={}", i + 1, c.seed, c.well_formed()));
        store::emit(&c.body);
        if c.truncated {
            eprintln!("candidate {}: stopped before end of sequence", i + 1);
        }
        if let Some(e) = &c.error {
            eprintln!("candidate {}: {e}", i + 1);
        }
        for r in c.report.iter().flat_map(|r| r.failures()) {
            eprintln!("candidate {}: {:?} {}", i + 1, r.rule, r.message);
        }
    }
    eprintln!(
        "{}/{} well-formed",
        batch.candidates.iter().filter(|c| c.well_formed()).count(),
        batch.candidates.len()
    );
    Ok(())
}
