//! Parameter checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VIMU" | u16 version | u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u32 rank | rank x u32 dims | f32 values
//! u32 CRC32 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VIMU";
pub const CHECKPOINT_VERSION: u16 = 1;
const MAX_RANK: usize = 8;

pub fn encode_checkpoint<T: Scalar>(tensors: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            what: "checkpoint",
            needed: self.pos.saturating_add(n) + 4,
            found: self.buf.len() + 4,
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < 4 + 2 + 4 + 4 {
        return Err(Error::Truncated {
            what: "checkpoint",
            needed: 14,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut r = Reader { buf: body, pos: 6 };
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            n = n
                .checked_mul(d)
                .filter(|&n| n.checked_mul(4).is_some())
                .ok_or_else(|| Error::Format(format!("dimensions of {name} overflow")))?;
            shape.push(d);
        }
        let raw = r.take(n * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_vec(shape, values)?));
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after last tensor", body.len() - r.pos)));
    }
    let computed = crc32fast::hash(body);
    if computed != stored {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(tensors)
}

pub fn write_checkpoint<T: Scalar>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(&params.named_tensors())).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// SHA-256 hex digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of every tensor of a parameter set, at full precision.
pub fn param_digest<T: Scalar>(params: &ParamSet<T>) -> String {
    let mut h = Sha256::new();
    for p in params.iter() {
        h.update(p.name.as_bytes());
        for v in p.value.values() {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            ("a.weight".into(), Tensor::from_vec(vec![2, 3], vec![1.5, -2.0, 0.25, 3.0, 1e-8, -0.0]).unwrap()),
            ("b".into(), Tensor::scalar(7.0)),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_checkpoint(&sample());
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(back[0].1.values()[5].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn rejects_corruption_and_truncation() {
        let bytes = encode_checkpoint(&sample());
        for cut in [0, 5, 13, 20, bytes.len() - 5, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 0x40;
        assert!(decode_checkpoint(&flipped).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(Error::Format(_))));
    }
}
