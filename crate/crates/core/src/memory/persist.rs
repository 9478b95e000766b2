//! Bank files: little-endian `"BMB1"`, version, `d_z`, `d_c`, count, then per
//! entry the key (`d_z × f32`), value (`d_c × f32`), action (`u32`), reward
//! (`f32`) and insert index (`u64`).

use std::fs;
use std::path::Path;

use crate::{Error, Result};

use super::{MemoryBank, MemoryEntry, DEFAULT_CAPACITY};

pub const BANK_MAGIC: &[u8; 4] = b"BMB1";
pub const BANK_VERSION: u32 = 1;

impl MemoryBank {
    pub fn to_bytes(&self) -> Vec<u8> {
        let per_entry = 4 * (self.d_z + self.d_c) + 4 + 4 + 8;
        let mut out = Vec::with_capacity(24 + per_entry * self.len());
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_z as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_c as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for e in self.entries() {
            for k in &e.key {
                out.extend_from_slice(&k.to_le_bytes());
            }
            for v in &e.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&e.action.to_le_bytes());
            out.extend_from_slice(&e.reward.to_le_bytes());
            out.extend_from_slice(&e.insert_index.to_le_bytes());
        }
        out
    }

    /// Parse a bank file. Capacity is the default or the stored count,
    /// whichever is larger; the scope id is 0.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != BANK_MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"BMB1\"")));
        }
        let version = r.u32("version")?;
        if version != BANK_VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let d_z = r.u32("d_z")? as usize;
        let d_c = r.u32("d_c")? as usize;
        if d_z == 0 || d_c == 0 {
            return Err(r.error_at(8, "dimensions must be positive".into()));
        }
        let count = r.u64("count")?;
        let per_entry = (4 * (d_z + d_c) + 16) as u64;
        let remaining = (bytes.len() - r.pos) as u64;
        if count.checked_mul(per_entry) != Some(remaining) {
            return Err(r.error_at(
                r.pos as u64,
                format!("{count} entries need {} bytes, found {remaining}", count.saturating_mul(per_entry)),
            ));
        }
        let mut entries = Vec::with_capacity(count as usize);
        let mut last_index: Option<u64> = None;
        for _ in 0..count {
            let start = r.pos as u64;
            let key = r.f32s(d_z, "key")?;
            let value = r.f32s(d_c, "value")?;
            let action = r.u32("action")?;
            let reward = r.f32("reward")?;
            let insert_index = r.u64("insert_index")?;
            if !key.iter().chain(&value).chain([&reward]).all(|v| v.is_finite()) {
                return Err(r.error_at(start, "non-finite value in entry".into()));
            }
            if last_index.is_some_and(|l| insert_index <= l) {
                return Err(r.error_at(r.pos as u64 - 8, "insert indices not increasing".into()));
            }
            last_index = Some(insert_index);
            entries.push(MemoryEntry {
                key,
                value,
                action,
                reward,
                insert_index,
            });
        }
        MemoryBank::from_entries(d_z, d_c, DEFAULT_CAPACITY.max(entries.len()), 0, entries)
    }
}

/// Write `bank` to `path`, returning the number of bytes written.
pub fn save_bank(bank: &MemoryBank, path: impl AsRef<Path>) -> Result<u64> {
    let bytes = bank.to_bytes();
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<MemoryBank> {
    MemoryBank::from_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: u64, message: String) -> Error {
        Error::Format { offset, message }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos as u64,
                format!("truncated reading {what}: need {n} bytes, have {}", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        (0..n).map(|_| self.f32(what)).collect()
    }
}
