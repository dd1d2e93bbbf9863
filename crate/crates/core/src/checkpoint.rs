//! Binary checkpoints with a JSON sidecar.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"PLRK"
//! u32    format version
//! u64    dim, hidden, vocabulary size
//! vocab  per token: u32 byte length, UTF-8 bytes
//! f64    embeddings, W1, b1, w2 (row-major), then b2
//! ```

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EncoderDims, EncoderParams, Vocab};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"PLRK";
pub const FORMAT_VERSION: u32 = 1;

/// Sidecar metadata stored next to a checkpoint as `<checkpoint>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub dims: EncoderDims,
    pub seed: u64,
    /// SHA-256 of the resolved training config as canonical JSON.
    pub config_digest: String,
    pub param_count: usize,
}

impl CheckpointMeta {
    pub fn new(dims: EncoderDims, config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            dims,
            seed: config.seed,
            config_digest: config_digest(config)?,
            param_count: dims.param_count(),
        })
    }
}

pub fn config_digest(config: &TrainConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_checkpoint(params: &EncoderParams, vocab: &Vocab) -> Result<Vec<u8>> {
    params.validate()?;
    if params.dims.vocab != vocab.len() {
        return Err(Error::contract("parameters and vocabulary disagree in size"));
    }
    let mut out = Vec::with_capacity(24 + 8 * params.dims.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for n in [params.dims.dim, params.dims.hidden, vocab.len()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for token in vocab.tokens() {
        let len = u32::try_from(token.len()).map_err(|_| Error::contract("token longer than 4 GiB"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(token.as_bytes());
    }
    for x in params.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::validation("checkpoint is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::validation("checkpoint size field overflows"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(EncoderParams, Vocab)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::validation("not a checkpoint: bad magic"));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::validation(format!("unsupported checkpoint version {version}")));
    }
    let dim = cur.usize()?;
    let hidden = cur.usize()?;
    let n_tokens = cur.usize()?;
    // every token costs at least its length prefix
    if n_tokens > bytes.len() / 4 {
        return Err(Error::validation("checkpoint vocabulary size is implausible"));
    }
    let mut tokens = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let len = cur.u32()? as usize;
        let raw = cur.take(len)?;
        let token = std::str::from_utf8(raw).map_err(|_| Error::validation("checkpoint token is not UTF-8"))?;
        tokens.push(token.to_string());
    }
    let vocab = Vocab::from_tokens(tokens)?;
    let dims = EncoderDims { vocab: n_tokens, dim, hidden };
    let count = dims.param_count();
    if count > (bytes.len() - cur.pos) / 8 + 1 {
        return Err(Error::validation("checkpoint is truncated"));
    }
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        flat.push(f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")));
    }
    if cur.pos != bytes.len() {
        return Err(Error::validation("trailing bytes after checkpoint"));
    }
    let params = EncoderParams::from_flat(dims, &flat)?;
    params.validate()?;
    Ok((params, vocab))
}

pub fn write_checkpoint<W: Write>(params: &EncoderParams, vocab: &Vocab, mut out: W) -> Result<()> {
    out.write_all(&encode_checkpoint(params, vocab)?)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(EncoderParams, Vocab)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Saves the checkpoint and its sidecar.
pub fn save(path: &Path, params: &EncoderParams, vocab: &Vocab, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params, vocab)?)?;
    let mut json = serde_json::to_vec_pretty(meta)?;
    json.push(b'\n');
    write_atomic(&sidecar_path(path), &json)
}

pub fn load(path: &Path) -> Result<(EncoderParams, Vocab)> {
    decode_checkpoint(&std::fs::read(path)?)
}
