//! Versioned binary checkpoints for model weights and optimizer moments.
//!
//! Layout: magic `ODAE`, format version (u16 LE), flags (bit 0: optimizer
//! moments present), window length, architecture dims, then every parameter
//! tensor in the canonical [`AutoencoderParams::tensors`] order as raw
//! little-endian f64 words (tensors themselves are stored column-major), and
//! a trailing SHA-256 over all preceding bytes.

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{AdamState, AutoencoderParams, ModelDims};

pub(crate) const MODEL_MAGIC: &[u8; 4] = b"ODAE";
pub(crate) const MODEL_VERSION: u16 = 1;
const FLAG_ADAM: u8 = 0b0000_0001;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found}")]
    VersionMismatch { found: u16 },
    #[error("corrupt checkpoint blob: {0}")]
    CorruptBlob(&'static str),
}

pub fn save_model(params: &AutoencoderParams, opt_state: Option<&AdamState>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    put_u16(&mut buf, MODEL_VERSION);
    buf.push(if opt_state.is_some() { FLAG_ADAM } else { 0 });
    put_u32(&mut buf, params.window_len as u32);
    let dims = params.dims();
    put_u32(&mut buf, dims.input_dim as u32);
    put_u32(&mut buf, dims.encoder_hidden.len() as u32);
    for &h in &dims.encoder_hidden {
        put_u32(&mut buf, h as u32);
    }
    for tensor in params.tensors() {
        put_f64_slice(&mut buf, tensor);
    }
    if let Some(state) = opt_state {
        put_u64(&mut buf, state.step);
        for tensor in &state.m {
            put_f64_slice(&mut buf, tensor);
        }
        for tensor in &state.v {
            put_f64_slice(&mut buf, tensor);
        }
    }
    append_checksum(&mut buf);
    buf
}

pub fn load_model(blob: &[u8]) -> Result<(AutoencoderParams, Option<AdamState>), CheckpointError> {
    let body = verify_checksum(blob)?;
    let mut cur = Cursor::new(body);
    let magic = cur.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(CheckpointError::CorruptBlob("bad magic"));
    }
    let version = cur.u16()?;
    if version != MODEL_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    let flags = cur.u8()?;
    let window_len = cur.u32()? as usize;
    let input_dim = cur.u32()? as usize;
    let n_layers = cur.u32()? as usize;
    if window_len == 0 || input_dim == 0 || n_layers == 0 || n_layers > 64 {
        return Err(CheckpointError::CorruptBlob("implausible dimensions"));
    }
    let mut encoder_hidden = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let h = cur.u32()? as usize;
        if h == 0 || h > 1 << 20 {
            return Err(CheckpointError::CorruptBlob("implausible hidden size"));
        }
        encoder_hidden.push(h);
    }
    let dims = ModelDims {
        input_dim,
        encoder_hidden,
    };
    let mut params = AutoencoderParams::zeros(&dims, window_len);
    for tensor in params.tensors_mut() {
        cur.f64_into(tensor)?;
    }
    let opt_state = if flags & FLAG_ADAM != 0 {
        let step = cur.u64()?;
        let mut state = AdamState::zeros_like(&params);
        for tensor in state.m.iter_mut() {
            cur.f64_into(tensor)?;
        }
        for tensor in state.v.iter_mut() {
            cur.f64_into(tensor)?;
        }
        state.step = step;
        Some(state)
    } else {
        None
    };
    if !cur.at_end() {
        return Err(CheckpointError::CorruptBlob("trailing bytes"));
    }
    Ok((params, opt_state))
}

pub(crate) fn append_checksum(buf: &mut Vec<u8>) {
    let digest = Sha256::digest(&buf[..]);
    buf.extend_from_slice(&digest);
}

pub(crate) fn verify_checksum(blob: &[u8]) -> Result<&[u8], CheckpointError> {
    if blob.len() < 32 {
        return Err(CheckpointError::CorruptBlob("blob shorter than checksum"));
    }
    let (body, stored) = blob.split_at(blob.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored {
        return Err(CheckpointError::CorruptBlob("checksum mismatch"));
    }
    Ok(body)
}

pub(crate) fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64_slice(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        put_f64(buf, v);
    }
}

pub(crate) struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.data.len() {
            return Err(CheckpointError::CorruptBlob("unexpected end of blob"));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_into(&mut self, out: &mut [f64]) -> Result<(), CheckpointError> {
        let bytes = self.take(out.len() * 8)?;
        for (i, v) in out.iter_mut().enumerate() {
            *v = f64::from_le_bytes(bytes[i * 8..(i + 1) * 8].try_into().unwrap());
        }
        Ok(())
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.data.len()
    }
}
