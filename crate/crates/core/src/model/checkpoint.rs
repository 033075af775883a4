//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "GUTICKPT"
//! version   u32      1
//! config    u32 n_layers, n_heads, d_model, d_ff, context_len, vocab_size;
//!           f64 dropout_rate; u8 tie_embeddings
//! count     u32      number of tensors
//! tensor*   u32 name length, UTF-8 name, u32 ndim, u32 dims.., f32 data
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::params::{Layout, ModelConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GUTICKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

pub fn write_checkpoint(params: &ModelParams<f32>, mut w: impl Write) -> Result<()> {
    let io = |e: std::io::Error| ck(format!("write failed: {e}"));
    let c = &params.config;
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    for v in [c.n_layers, c.n_heads, c.d_model, c.d_ff, c.context_len, c.vocab_size] {
        put_u32(&mut w, v).map_err(io)?;
    }
    w.write_all(&c.dropout_rate.to_le_bytes()).map_err(io)?;
    w.write_all(&[c.tie_embeddings as u8]).map_err(io)?;
    put_u32(&mut w, params.layout.tensors.len()).map_err(io)?;
    for info in &params.layout.tensors {
        put_u32(&mut w, info.name.len()).map_err(io)?;
        w.write_all(info.name.as_bytes()).map_err(io)?;
        put_u32(&mut w, info.shape.len()).map_err(io)?;
        for &dim in &info.shape {
            put_u32(&mut w, dim).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(info.numel() * 4);
        for x in &params.data[info.range()] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| ck(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<ModelParams<f32>> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(ck("bad magic bytes; not a checkpoint"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(ck(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config = ModelConfig {
        n_layers: r.u32()?,
        n_heads: r.u32()?,
        d_model: r.u32()?,
        d_ff: r.u32()?,
        context_len: r.u32()?,
        vocab_size: r.u32()?,
        dropout_rate: f64::from_le_bytes(r.bytes()?),
        tie_embeddings: match r.bytes::<1>()?[0] {
            0 => false,
            1 => true,
            b => return Err(ck(format!("bad tie flag {b}"))),
        },
    };
    config.validate().map_err(|e| ck(format!("invalid config: {e}")))?;
    let layout = Layout::new(&config);
    let count = r.u32()?;
    if count != layout.tensors.len() {
        return Err(ck(format!(
            "expected {} tensors for this config, found {count}",
            layout.tensors.len()
        )));
    }
    let mut data = Vec::with_capacity(layout.total);
    for info in &layout.tensors {
        let name_len = r.u32()?;
        if name_len > 256 {
            return Err(ck("tensor name too long"));
        }
        let mut name = vec![0u8; name_len];
        r.inner
            .read_exact(&mut name)
            .map_err(|e| ck(format!("truncated checkpoint: {e}")))?;
        if name != info.name.as_bytes() {
            return Err(ck(format!(
                "expected tensor `{}`, found `{}`",
                info.name,
                String::from_utf8_lossy(&name)
            )));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != info.shape {
            return Err(ck(format!(
                "tensor `{}` has shape {shape:?}, expected {:?}",
                info.name, info.shape
            )));
        }
        for _ in 0..info.numel() {
            data.push(f32::from_le_bytes(r.bytes()?));
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| ck(e.to_string()))? != 0 {
        return Err(ck("trailing bytes after last tensor"));
    }
    let params = ModelParams {
        config,
        layout: Arc::new(layout),
        data,
    };
    if !params.is_finite() {
        return Err(ck("non-finite weight in checkpoint"));
    }
    Ok(params)
}

/// Writes via a temporary sibling file and renames, so a crash never leaves
/// a half-written checkpoint at `path`.
pub fn save_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_checkpoint(params, BufWriter::new(file))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
