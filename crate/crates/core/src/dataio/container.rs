//! Binary recording and weights containers (little-endian).
//!
//! Recording (`NMM1`): magic, u32 {version = 1, n_channels, n_samples,
//! sample_rate}, u16 subject-id length, u16 recording-id length, both ids as
//! UTF-8, EEG as f32 channel-major, then the envelope as f32.
//!
//! Weights (`NMW1`): magic, u32 tensor count, then per tensor a u16 name
//! length, the UTF-8 name, u8 ndim, u32 dims, f32 data.

use std::fs;
use std::path::Path;

use super::Recording;
use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::ndcore::Tensor;

pub const RECORDING_MAGIC: &[u8; 4] = b"NMM1";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"NMW1";
const RECORDING_VERSION: u32 = 1;

pub fn encode_recording(rec: &Recording) -> Result<Vec<u8>> {
    let (sid, rid) = (rec.subject_id().as_bytes(), rec.recording_id().as_bytes());
    let id_len = |b: &[u8]| {
        u16::try_from(b.len()).map_err(|_| Error::invalid("identifier longer than 65535 bytes"))
    };
    let count = |v: usize| {
        u32::try_from(v).map_err(|_| Error::invalid("recording too large for container"))
    };
    let mut out = Vec::with_capacity(28 + sid.len() + rid.len() + 4 * (rec.eeg().len() + rec.n_samples()));
    out.extend_from_slice(RECORDING_MAGIC);
    for v in [
        RECORDING_VERSION,
        count(rec.n_channels())?,
        count(rec.n_samples())?,
        rec.sample_rate_hz(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&id_len(sid)?.to_le_bytes());
    out.extend_from_slice(&id_len(rid)?.to_le_bytes());
    out.extend_from_slice(sid);
    out.extend_from_slice(rid);
    for v in rec.eeg().iter().chain(rec.envelope()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Container {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != expected {
            self.pos = start;
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        let start = self.pos;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| {
            self.pos = start;
            self.fail(format!("{what} is not valid UTF-8"))
        })
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes_needed = n
            .checked_mul(4)
            .ok_or_else(|| self.fail(format!("{what} size overflows")))?;
        let raw = self.take(bytes_needed, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Parses a recording container; `path` only labels diagnostics.
pub fn decode_recording(buf: &[u8], path: &Path) -> Result<Recording> {
    let mut c = Cursor { buf, pos: 0, path };
    c.magic(RECORDING_MAGIC)?;
    let version = c.u32("version")?;
    if version != RECORDING_VERSION {
        c.pos -= 4;
        return Err(c.fail(format!("unsupported version {version}")));
    }
    let n_channels = c.u32("channel count")? as usize;
    let n_samples = c.u32("sample count")? as usize;
    let rate = c.u32("sample rate")?;
    let sid_len = c.u16("subject id length")? as usize;
    let rid_len = c.u16("recording id length")? as usize;
    let sid = c.utf8(sid_len, "subject id")?;
    let rid = c.utf8(rid_len, "recording id")?;
    let eeg = c.f32s(n_channels * n_samples, "EEG samples")?;
    let envelope = c.f32s(n_samples, "envelope samples")?;
    c.finish()?;
    Recording::new(sid, rid, rate, n_channels, eeg, envelope).map_err(|e| c.fail(e.to_string()))
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    fs::write(path, encode_recording(rec)?).map_err(|e| Error::io(path, e))
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_recording(&buf, path)
}

pub fn encode_weights<'a>(
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(t.ndim())
            .map_err(|_| Error::invalid(format!("tensor {name} has too many dims")))?;
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(buf: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf, pos: 0, path };
    c.magic(WEIGHTS_MAGIC)?;
    let count = c.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name = c.utf8(name_len, "tensor name")?;
        let ndim = c.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| c.fail(format!("tensor {name} size overflows")))?;
        let data = c.f32s(numel, "tensor data")?;
        let t = Tensor::new(shape, data.into_iter().map(f64::from).collect())
            .map_err(|e| c.fail(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    c.finish()?;
    Ok(out)
}

pub fn write_weights(path: &Path, params: &NetworkParams) -> Result<()> {
    fs::write(path, encode_weights(params.iter())?).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&buf, path)
}
