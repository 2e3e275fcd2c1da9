//! Append-only running-checkpoint log.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header  = "SCARCKPT" version:u32
//! record  = flag:u8 unit_id:u64 saved_iteration:u64 count:u32 payload
//! payload = count x f64   (flag 0)
//!         | count x u32   (flag 1, LDA topic ids)
//! ```
//!
//! Replay keeps the last record per unit.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, ScarError};

pub const MAGIC: &[u8; 8] = b"SCARCKPT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;
const RECORD_PREFIX: usize = 1 + 8 + 8 + 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Values(Vec<f64>),
    Topics(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub unit_id: u64,
    pub saved_iteration: u64,
    pub payload: Payload,
}

impl LogRecord {
    pub fn encoded_len(&self) -> usize {
        RECORD_PREFIX
            + match &self.payload {
                Payload::Values(v) => 8 * v.len(),
                Payload::Topics(t) => 4 * t.len(),
            }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let (flag, count) = match &self.payload {
            Payload::Values(v) => (0u8, v.len()),
            Payload::Topics(t) => (1u8, t.len()),
        };
        out.push(flag);
        out.extend_from_slice(&self.unit_id.to_le_bytes());
        out.extend_from_slice(&self.saved_iteration.to_le_bytes());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        match &self.payload {
            Payload::Values(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Topics(t) => t.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

pub fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(MAGIC);
    h[8..].copy_from_slice(&VERSION.to_le_bytes());
    h
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| ScarError::CorruptLog(format!("truncated record at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes every record in order.
pub fn decode(bytes: &[u8]) -> Result<Vec<LogRecord>> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(ScarError::CorruptLog("missing SCARCKPT header".into()));
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ScarError::CorruptLog(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let flag = cur.take(1)?[0];
        let unit_id = cur.u64()?;
        let saved_iteration = cur.u64()?;
        let count = cur.u32()? as usize;
        let payload = match flag {
            0 => Payload::Values(
                cur.take(8 * count)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            1 => Payload::Topics(
                cur.take(4 * count)?
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            other => return Err(ScarError::CorruptLog(format!("unknown record flag {other}"))),
        };
        records.push(LogRecord {
            unit_id,
            saved_iteration,
            payload,
        });
    }
    Ok(records)
}

/// The latest record per unit.
pub fn replay(bytes: &[u8]) -> Result<BTreeMap<u64, LogRecord>> {
    Ok(decode(bytes)?.into_iter().map(|r| (r.unit_id, r)).collect())
}

/// Where the log bytes go.
#[derive(Debug)]
pub enum LogSink {
    Memory(Vec<u8>),
    File { path: PathBuf, file: File },
}

impl LogSink {
    pub fn memory() -> Self {
        LogSink::Memory(header().to_vec())
    }

    /// Creates (truncating) the log file at `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        file.write_all(&header())?;
        file.flush()?;
        Ok(LogSink::File {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Appends `bytes` as one write. On error nothing is guaranteed about
    /// the tail of a file sink, and the caller must not treat it as saved.
    pub fn append(&mut self, bytes: &[u8]) -> Result<()> {
        match self {
            LogSink::Memory(buf) => buf.extend_from_slice(bytes),
            LogSink::File { file, .. } => {
                file.write_all(bytes)?;
                file.flush()?;
            }
        }
        Ok(())
    }

    /// The full log contents.
    pub fn read_all(&self) -> Result<Vec<u8>> {
        match self {
            LogSink::Memory(buf) => Ok(buf.clone()),
            LogSink::File { path, .. } => {
                let mut out = Vec::new();
                File::open(path)?.read_to_end(&mut out)?;
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout_is_fixed() {
        let r = LogRecord {
            unit_id: 0x0102,
            saved_iteration: 7,
            payload: Payload::Values(vec![1.5]),
        };
        let mut out = Vec::new();
        r.encode_into(&mut out);
        assert_eq!(out.len(), r.encoded_len());
        assert_eq!(out[0], 0);
        assert_eq!(&out[1..9], &[2, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&out[9..17], &7u64.to_le_bytes());
        assert_eq!(&out[17..21], &1u32.to_le_bytes());
        assert_eq!(&out[21..], &1.5f64.to_le_bytes());
        assert_eq!(&header()[..8], b"SCARCKPT");
        assert_eq!(&header()[8..], &[1, 0, 0, 0]);
    }

    #[test]
    fn decode_round_trips_and_latest_wins() {
        let mut bytes = header().to_vec();
        let recs = [
            LogRecord {
                unit_id: 1,
                saved_iteration: 0,
                payload: Payload::Values(vec![1.0, -2.0]),
            },
            LogRecord {
                unit_id: 2,
                saved_iteration: 0,
                payload: Payload::Topics(vec![0, 3, 3]),
            },
            LogRecord {
                unit_id: 1,
                saved_iteration: 4,
                payload: Payload::Values(vec![f64::MIN_POSITIVE, 9.0]),
            },
        ];
        recs.iter().for_each(|r| r.encode_into(&mut bytes));
        assert_eq!(decode(&bytes).unwrap(), recs.to_vec());
        let view = replay(&bytes).unwrap();
        assert_eq!(view[&1], recs[2]);
        assert_eq!(view[&2], recs[1]);
    }

    #[test]
    fn corrupt_logs_are_rejected() {
        assert!(matches!(decode(b"NOTALOG!\x01\0\0\0"), Err(ScarError::CorruptLog(_))));
        let mut bytes = header().to_vec();
        LogRecord {
            unit_id: 1,
            saved_iteration: 0,
            payload: Payload::Values(vec![1.0]),
        }
        .encode_into(&mut bytes);
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(ScarError::CorruptLog(_))));
        let mut bad_version = header().to_vec();
        bad_version[8] = 2;
        assert!(decode(&bad_version).is_err());
    }

    #[test]
    fn file_sink_matches_memory_sink() {
        let dir = tempfile::tempdir().unwrap();
        let mut file = LogSink::create(&dir.path().join("ckpt-0.scar")).unwrap();
        let mut mem = LogSink::memory();
        let mut rec = Vec::new();
        LogRecord {
            unit_id: 5,
            saved_iteration: 2,
            payload: Payload::Values(vec![0.25; 3]),
        }
        .encode_into(&mut rec);
        file.append(&rec).unwrap();
        mem.append(&rec).unwrap();
        assert_eq!(file.read_all().unwrap(), mem.read_all().unwrap());
    }
}
