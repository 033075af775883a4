use std::path::PathBuf;

use clap::Args;
use guti_core::model::{init_params, load_checkpoint, save_checkpoint, ModelConfig};
use guti_core::trainer::{encode_corpus, evaluate_nll, fine_tune, split_heldout, AdamConfig, TrainConfig};

use crate::fail::{user, CmdResult, Context};
use crate::store;
use crate::{resolve_seed, Common};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `guti ingest`.
    pub dataset: PathBuf,
    /// Output model directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of fresh weights; its shape
    /// overrides the model flags.
    #[arg(long, alias = "init-from")]
    pub init: Option<PathBuf>,
    /// Seed for initialization, shuffling and dropout; random when absent.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub d_model: usize,
    #[arg(long, default_value_t = 512)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 256)]
    pub context_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Use a separate output projection instead of the embedding matrix.
    #[arg(long)]
    pub untied: bool,

    #[arg(long, default_value_t = 2000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Peak learning rate.
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = 100)]
    pub log_interval: usize,
    /// Steps between checkpoints under `<out>/checkpoints`; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_interval: usize,
    /// Fraction of samples, chosen by hash of their id, kept out of training.
    #[arg(long, default_value_t = 0.05)]
    pub heldout_fraction: f64,
    /// Steps between greedy novelty probes; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub novelty_eval_interval: usize,
    #[arg(long, default_value_t = 8)]
    pub novelty_probes: usize,
    /// Stop once probe novelty drops below this value.
    #[arg(long)]
    pub early_stop_novelty: Option<f64>,
}

pub fn run(args: &TrainArgs, common: &Common) -> CmdResult {
    let catalog = store::catalog(common)?;
    let (samples, vocab) = store::read_dataset(&args.dataset)?;
    let seed = resolve_seed(args.seed);
    let cfg = TrainConfig {
        optimizer: AdamConfig {
            learning_rate: args.lr,
            ..Default::default()
        },
        batch_size: args.batch_size,
        max_steps: args.max_steps,
        warmup_steps: args.warmup_steps,
        log_interval: args.log_interval,
        checkpoint_interval: args.checkpoint_interval,
        checkpoint_dir: (args.checkpoint_interval > 0).then(|| args.out.join("checkpoints")),
        seed,
        novelty_eval_interval: args.novelty_eval_interval,
        novelty_probes: args.novelty_probes,
        early_stop_novelty: args.early_stop_novelty,
        heldout_fraction: args.heldout_fraction,
    };
    cfg.check()?;
    if args.max_steps == 0 {
        eprintln!("max-steps is 0; nothing to do");
        return Ok(());
    }
    let mut params = match &args.init {
        Some(path) => load_checkpoint(path).user_ctx(|| format!("loading {}", path.display()))?,
        None => {
            let model = ModelConfig {
                n_layers: args.layers,
                n_heads: args.heads,
                d_model: args.d_model,
                d_ff: args.d_ff,
                context_len: args.context_len,
                vocab_size: vocab.len(),
                dropout_rate: args.dropout,
                tie_embeddings: !args.untied,
            };
            init_params(&model, seed)?
        }
    };
    if params.config.vocab_size != vocab.len() {
        return Err(user(format!(
            "checkpoint vocab size {} does not match dataset vocab {}",
            params.config.vocab_size,
            vocab.len()
        )));
    }
    std::fs::create_dir_all(&args.out).internal_ctx(|| format!("creating {}", args.out.display()))?;
    eprintln!(
        "training {} parameters on {} samples for {} steps",
        params.len(),
        samples.len(),
        args.max_steps
    );
    let report = fine_tune(&samples, &vocab, &catalog, &mut params, &cfg)?;

    let metrics = report.metrics_jsonl();
    print!("{metrics}");
    store::write_file(&args.out.join(store::METRICS_FILE), metrics.as_bytes())?;
    save_checkpoint(&params, args.out.join(store::MODEL_FILE)).internal_ctx(|| "writing model".into())?;
    vocab
        .save(args.out.join(store::VOCAB_FILE))
        .internal_ctx(|| "writing vocab".into())?;

    let (train, _) = split_heldout(&samples, cfg.heldout_fraction);
    let seqs = encode_corpus(&train, &vocab, params.config.context_len)?;
    let nll = evaluate_nll(&params, &seqs, cfg.batch_size)?;
    eprintln!(
        "{} steps in {:.1}s, {} skipped; training NLL {nll:.4}{}; model in {}",
        report.steps_run,
        report.wall_clock_secs,
        report.aborted_steps.len(),
        if report.early_stopped { " (early stop)" } else { "" },
        args.out.display()
    );
    Ok(())
}
