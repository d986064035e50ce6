//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "GATTNCKP"                        8 bytes
//! version u32
//! config  u64 length + UTF-8 TOML
//! vocab   u64 length + UTF-8 vocabulary text
//! meta    u64 length + UTF-8 key/value lines
//! count   u32
//! blocks  count × { u32 name length, name, u32 ndim, ndim × u64 dim, f64 data }
//! digest  32-byte SHA-256 of every byte after the version field
//! ```

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::train::EpochMetrics;
use super::{Checkpoint, CheckpointError, ModelConfig, Params, TrainMetadata};
use crate::corpus::Vocabulary;
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"GATTNCKP";
const VERSION: u32 = 1;

fn put_text(buf: &mut Vec<u8>, text: &str) {
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
}

fn meta_text(ckpt: &Checkpoint) -> String {
    let m = &ckpt.meta;
    let mut out = String::new();
    let _ = writeln!(out, "vocab_hash={}", ckpt.vocab_hash);
    let _ = writeln!(out, "seed={}", m.seed);
    let _ = writeln!(out, "best_epoch={}", m.best_epoch);
    let _ = writeln!(out, "epochs_run={}", m.epochs_run);
    for h in &m.history {
        let _ = writeln!(
            out,
            "epoch={} {} {} {}",
            h.epoch, h.train_loss, h.dev_loss, h.dev_accuracy
        );
    }
    out
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut body = Vec::new();
    put_text(&mut body, &ckpt.config.to_toml());
    put_text(&mut body, &ckpt.vocab.to_text());
    put_text(&mut body, &meta_text(ckpt));
    body.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, t) in ckpt.params.iter() {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&body);
    let mut out = Vec::with_capacity(12 + body.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<&'a str, CheckpointError> {
        let len = usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated)?;
        std::str::from_utf8(self.take(len)?).map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
}

fn parse_meta(text: &str) -> Result<(String, TrainMetadata), CheckpointError> {
    let bad = |line: &str| CheckpointError::Malformed(format!("metadata line {line:?}"));
    let mut hash = None;
    let mut meta = TrainMetadata::default();
    for line in text.lines() {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
        match key {
            "vocab_hash" => hash = Some(value.to_string()),
            "seed" => meta.seed = value.parse().map_err(|_| bad(line))?,
            "best_epoch" => meta.best_epoch = value.parse().map_err(|_| bad(line))?,
            "epochs_run" => meta.epochs_run = value.parse().map_err(|_| bad(line))?,
            "epoch" => {
                let f: Vec<&str> = value.split(' ').collect();
                if f.len() != 4 {
                    return Err(bad(line));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
                meta.history.push(EpochMetrics {
                    epoch: f[0].parse().map_err(|_| bad(line))?,
                    train_loss: num(f[1])?,
                    dev_loss: num(f[2])?,
                    dev_accuracy: num(f[3])?,
                });
            }
            _ => return Err(bad(line)),
        }
    }
    Ok((hash.ok_or_else(|| bad("vocab_hash"))?, meta))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 12 + 32 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let (body, digest) = bytes[12..].split_at(bytes.len() - 12 - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 0 };
    let config = ModelConfig::from_toml(r.text()?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let vocab = Vocabulary::from_text(r.text()?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let (vocab_hash, meta) = parse_meta(r.text()?)?;
    if vocab.hash() != vocab_hash {
        return Err(CheckpointError::VocabularyHash {
            expected: vocab_hash,
            actual: vocab.hash(),
        });
    }
    let count = r.u32()?;
    let mut params = Params::default();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("parameter name".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params.insert(name, t);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    let expected = Params::init(&config, vocab.size());
    for (name, t) in expected.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            _ => return Err(CheckpointError::Malformed(format!("parameter {name} missing or misshapen"))),
        }
    }
    if expected.len() != params.len() {
        return Err(CheckpointError::Malformed("unexpected parameters".into()));
    }
    Ok(Checkpoint {
        config,
        vocab,
        vocab_hash,
        params,
        meta,
    })
}
