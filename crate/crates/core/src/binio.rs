//! Little-endian framing helpers shared by the RMF1, EMB1 and parameter formats.
//!
//! All three formats end in a CRC32 of every preceding byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const CRC_LEN: usize = 4;

/// Appends the CRC32 trailer and writes the buffer to `path` through a sibling
/// temp file, so readers never observe a half-written file.
pub(crate) fn write_with_crc(path: &Path, mut buf: Vec<u8>) -> Result<()> {
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Checks the trailer of a buffer whose exact length has already been validated.
pub(crate) fn verify_crc(bytes: &[u8]) -> Result<()> {
    let split = bytes.len() - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[split..].try_into().expect("4-byte trailer"));
    let computed = crc32fast::hash(&bytes[..split]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

pub(crate) fn check_len(expected: u64, found: usize) -> Result<()> {
    let found = found as u64;
    if found < expected {
        Err(Error::Truncated { expected, found })
    } else if found > expected {
        Err(Error::TrailingBytes { expected, found })
    } else {
        Ok(())
    }
}

/// Forward-only cursor over a byte slice. Bounds are validated up front by the
/// callers, but every read is still checked.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
