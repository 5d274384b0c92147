//! Binary checkpoint container. All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "DLGCKPT\0"
//! version    u32
//! hdr_len    u32
//! header     hdr_len bytes of UTF-8 JSON (CheckpointHeader)
//! n_tensors  u32
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   ndim     u8, then ndim x u64 extents
//!   data     prod(extents) x f64, row-major
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, Seq2SeqParams};
use crate::error::{Error, Result};
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `user`, `slnt`, `slt` or `rl`.
    pub role: String,
    pub dims: Dims,
    pub vocab_hash: String,
    pub max_len: usize,
}

pub fn save_checkpoint(path: &Path, params: &Seq2SeqParams, header: &CheckpointHeader) -> Result<()> {
    if header.dims != params.dims {
        return Err(Error::Checkpoint("header dims disagree with parameters".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header_json = serde_json::to_vec(header)?;
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.ndim() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_array<const N: usize>(cur: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    cur.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(b)
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(cur)?))
}

fn read_bytes(cur: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    cur.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(b)
}

/// Loads a checkpoint and checks it was trained against `vocab`.
pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<(CheckpointHeader, Seq2SeqParams)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let raw = fs::read(path)?;
    let mut cur = Cursor::new(raw.as_slice());
    if &read_array::<8>(&mut cur)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = read_u32(&mut cur)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hdr_len = read_u32(&mut cur)? as usize;
    let header: CheckpointHeader = serde_json::from_slice(&read_bytes(&mut cur, hdr_len)?)?;
    let found = vocab.hash();
    if header.vocab_hash != found {
        return Err(Error::VocabMismatch {
            expected: header.vocab_hash,
            found,
        });
    }
    let mut params = Seq2SeqParams::zeros(header.dims);
    let n = read_u32(&mut cur)? as usize;
    let mut tensors = params.tensors_mut();
    if n != tensors.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {n}", tensors.len())));
    }
    for (name, t) in tensors.iter_mut() {
        let name_len = u16::from_le_bytes(read_array(&mut cur)?) as usize;
        let got = String::from_utf8(read_bytes(&mut cur, name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if got != *name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {got}")));
        }
        let ndim = read_array::<1>(&mut cur)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_array(&mut cur)?) as usize);
        }
        if shape != t.shape() {
            return Err(Error::Checkpoint(format!("tensor {name}: shape {shape:?}, expected {:?}", t.shape())));
        }
        for x in t.iter_mut() {
            *x = f64::from_le_bytes(read_array(&mut cur)?);
        }
    }
    drop(tensors);
    Ok((header, params))
}
