//! On-disk layout shared by the subcommands.
//!
//! A dataset directory holds `dataset.jsonl` (one serialized sample per
//! line) and `vocab.txt`. A model directory holds `model.ckpt`, a copy of
//! the vocabulary, `metrics.jsonl` and optional `checkpoints/`.

use std::io::Write;
use std::path::{Path, PathBuf};

use guti_core::corpus::{FormCatalog, SerializedSample};
use guti_core::model::{load_checkpoint, ModelParams};
use guti_core::tokenizer::Vocab;
use guti_core::validator::PhonologyTable;

use crate::fail::{user, CmdResult, Context};
use crate::Common;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub fn catalog(common: &Common) -> CmdResult<FormCatalog> {
    match &common.catalog {
        Some(path) => FormCatalog::load(path).user_ctx(|| format!("loading catalog {}", path.display())),
        None => Ok(FormCatalog::builtin()),
    }
}

pub fn phonology(common: &Common) -> CmdResult<PhonologyTable> {
    match &common.phonology {
        Some(path) => PhonologyTable::load(path).user_ctx(|| format!("loading phonology {}", path.display())),
        None => Ok(PhonologyTable::builtin()),
    }
}

pub fn write_dataset(dir: &Path, samples: &[SerializedSample], vocab: &Vocab) -> CmdResult {
    std::fs::create_dir_all(dir).internal_ctx(|| format!("creating {}", dir.display()))?;
    let mut text = String::new();
    for s in samples {
        text.push_str(&serde_json::to_string(s).internal_ctx(|| "serializing sample".into())?);
        text.push('\n');
    }
    let path = dir.join(DATASET_FILE);
    write_file(&path, text.as_bytes())?;
    vocab.save(dir.join(VOCAB_FILE)).internal_ctx(|| "writing vocab".into())
}

pub fn read_dataset(dir: &Path) -> CmdResult<(Vec<SerializedSample>, Vocab)> {
    let path = dir.join(DATASET_FILE);
    let text = std::fs::read_to_string(&path).user_ctx(|| format!("reading {}", path.display()))?;
    let samples = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).user_ctx(|| format!("{}:{}", path.display(), i + 1)))
        .collect::<CmdResult<Vec<SerializedSample>>>()?;
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = Vocab::load(&vocab_path).user_ctx(|| format!("reading {}", vocab_path.display()))?;
    Ok((samples, vocab))
}

/// The checkpoint (`model.ckpt` unless overridden) and vocabulary of a
/// model directory.
pub fn read_model(dir: &Path, checkpoint: Option<&PathBuf>) -> CmdResult<(ModelParams<f32>, Vocab)> {
    let ckpt = checkpoint.cloned().unwrap_or_else(|| dir.join(MODEL_FILE));
    let params = load_checkpoint(&ckpt).user_ctx(|| format!("loading {}", ckpt.display()))?;
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = Vocab::load(&vocab_path).user_ctx(|| format!("reading {}", vocab_path.display()))?;
    if vocab.len() != params.config.vocab_size {
        return Err(user(format!(
            "vocab has {} entries but the model expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    Ok((params, vocab))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).internal_ctx(|| format!("writing {}", path.display()))
}

/// Prints one line to stdout, ignoring a closed pipe.
pub fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}
