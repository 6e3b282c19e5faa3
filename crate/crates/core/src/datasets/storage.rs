//! Trial files.
//!
//! ```text
//! "GST1" | u8 flags (bit 0 sEMG, bit 1 acc, bit 2 euler) | u32 frames
//! u32 channels per present modality, in bit order
//! f32 row-major payload per present modality, in bit order
//! u32 CRC32 of everything above
//! ```
//! Integers and floats are little-endian.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{TrialKey, TrialRecord};
use crate::error::{Error, Result};
use crate::sigproc::{Modality, MultichannelSeries};

pub const TRIAL_MAGIC: &[u8; 4] = b"GST1";
const FLAG_SEMG: u8 = 1;
const FLAG_ACC: u8 = 2;
const FLAG_EULER: u8 = 4;

fn imu_flag(m: Modality) -> u8 {
    match m {
        Modality::Acc => FLAG_ACC,
        Modality::Euler => FLAG_EULER,
        Modality::Semg => unreachable!("checked by TrialRecord::new"),
    }
}

pub fn encode_trial(t: &TrialRecord) -> Vec<u8> {
    let mut parts = vec![&t.semg];
    let mut flags = FLAG_SEMG;
    if let Some(imu) = &t.imu {
        flags |= imu_flag(imu.modality());
        parts.push(imu);
    }
    let payload: usize = parts.iter().map(|p| p.data().len() * 4).sum();
    let mut out = Vec::with_capacity(9 + 4 * parts.len() + payload + 4);
    out.extend_from_slice(TRIAL_MAGIC);
    out.push(flags);
    out.extend_from_slice(&(t.frames() as u32).to_le_bytes());
    for p in &parts {
        out.extend_from_slice(&(p.channels() as u32).to_le_bytes());
    }
    for p in &parts {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn truncated(needed: usize, found: usize) -> Error {
    Error::Truncated {
        what: "trial file",
        needed,
        found,
    }
}

/// Parses a trial file; `key` and `sample_rate_hz` come from the manifest.
pub fn decode_trial(bytes: &[u8], key: TrialKey, sample_rate_hz: f64) -> Result<TrialRecord> {
    const HEADER: usize = 4 + 1 + 4;
    if bytes.len() < 4 || &bytes[..4] != TRIAL_MAGIC {
        if bytes.len() < 4 && TRIAL_MAGIC.starts_with(bytes) {
            return Err(truncated(HEADER + 4, bytes.len()));
        }
        return Err(Error::Format("bad trial magic".into()));
    }
    if bytes.len() < HEADER {
        return Err(truncated(HEADER + 4, bytes.len()));
    }
    let flags = bytes[4];
    if flags & FLAG_SEMG == 0 || flags & !(FLAG_SEMG | FLAG_ACC | FLAG_EULER) != 0 {
        return Err(Error::Format(format!("unsupported modality flags {flags:#04b}")));
    }
    if flags & FLAG_ACC != 0 && flags & FLAG_EULER != 0 {
        return Err(Error::Format("a trial holds at most one IMU modality".into()));
    }
    let frames = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if frames == 0 {
        return Err(Error::Format("trial has no frames".into()));
    }
    let mut modalities = vec![Modality::Semg];
    if flags & FLAG_ACC != 0 {
        modalities.push(Modality::Acc);
    }
    if flags & FLAG_EULER != 0 {
        modalities.push(Modality::Euler);
    }
    let mut pos = HEADER;
    let mut channels = Vec::new();
    let mut total: usize = 0;
    for _ in &modalities {
        let end = pos + 4;
        if bytes.len() < end {
            return Err(truncated(end + 4, bytes.len()));
        }
        let c = u32::from_le_bytes(bytes[pos..end].try_into().unwrap()) as usize;
        if c == 0 {
            return Err(Error::Format("zero channels".into()));
        }
        total = frames
            .checked_mul(c)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(total))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        channels.push(c);
        pos = end;
    }
    let needed = pos
        .checked_add(total)
        .and_then(|n| n.checked_add(4))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if bytes.len() < needed {
        return Err(truncated(needed, bytes.len()));
    }
    if bytes.len() > needed {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let body = &bytes[..needed - 4];
    let stored = u32::from_le_bytes(bytes[needed - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut series = Vec::new();
    for (m, c) in modalities.into_iter().zip(channels) {
        let n = frames * c * 4;
        let data = body[pos..pos + n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        pos += n;
        series.push(MultichannelSeries::new(data, c, sample_rate_hz, m)?);
    }
    let imu = if series.len() == 2 { series.pop() } else { None };
    TrialRecord::new(key, series.pop().unwrap(), imu)
}

pub fn write_trial(path: &Path, t: &TrialRecord) -> Result<()> {
    if t.frames() == 0 {
        return Err(Error::Format("refusing to write a trial without frames".into()));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_trial(t)).map_err(|e| Error::io(path, e))
}

pub fn read_trial(path: &Path, key: TrialKey, sample_rate_hz: f64) -> Result<TrialRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trial(&bytes, key, sample_rate_hz)
}

/// Exclusive write access to a dataset directory, released on drop.
#[derive(Debug)]
pub struct DatasetLock {
    path: PathBuf,
    _file: File,
}

impl DatasetLock {
    pub const FILE: &'static str = ".vimu.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::Locked(dir.to_path_buf())),
            Err(e) => return Err(Error::io(&path, e)),
        };
        writeln!(file, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
        Ok(DatasetLock { path, _file: file })
    }
}

impl Drop for DatasetLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
