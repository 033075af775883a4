//! Times the overfit recipe on the bundled toy corpus.
//!
//! `cargo run --release -p guti-core --example overfit -- [steps] [d_model]`

use guti_core::corpus::{acrostic_transform, ingest_str, serialize, FormCatalog, IngestOptions};
use guti_core::model::{init_params, ModelConfig};
use guti_core::tokenizer::build_vocab;
use guti_core::trainer::{encode_corpus, evaluate_nll, fine_tune, TrainConfig};

fn main() -> guti_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(200, |s| s.parse().expect("steps"));
    let d: usize = args.next().map_or(128, |s| s.parse().expect("d_model"));
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().expect("learning rate"));
    let catalog = FormCatalog::builtin();
    let out = ingest_str(include_str!("../data/toy_corpus.jsonl"), &catalog, &IngestOptions::default());
    let mut samples = Vec::new();
    for p in &out.poems {
        samples.push(serialize(p, &catalog)?);
        samples.push(serialize(&acrostic_transform(p, &catalog)?, &catalog)?);
    }
    let vocab = build_vocab(&samples, 1)?;
    let cfg = ModelConfig {
        d_model: d,
        d_ff: 4 * d,
        dropout_rate: 0.0,
        ..ModelConfig::desk(vocab.len())
    };
    let mut params = init_params(&cfg, 0)?;
    let tc = TrainConfig {
        max_steps: steps,
        heldout_fraction: 0.0,
        log_interval: 50,
        optimizer: guti_core::trainer::AdamConfig {
            learning_rate: lr,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = fine_tune(&samples, &vocab, &catalog, &mut params, &tc)?;
    for m in &report.intervals {
        println!("step {:5} loss {:.4}", m.step, m.mean_loss);
    }
    let refs: Vec<_> = samples.iter().collect();
    let seqs = encode_corpus(&refs, &vocab, cfg.context_len)?;
    let tokens: usize = seqs.iter().map(|s| s.len() - 1).sum();
    println!(
        "final nll {:.4}, floor {:.4}",
        evaluate_nll(&params, &seqs, 16)?,
        (samples.len() as f64).ln() * samples.len() as f64 / tokens as f64
    );
    println!("{} sequences, vocab {}, {:.1}s", samples.len(), vocab.len(), report.wall_clock_secs);
    Ok(())
}
