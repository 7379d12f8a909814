//! Block codec.
//!
//! Layout: entry_count (u16) | kv offset table (u16 per entry, relative
//! to block start) | records | CRC32C (u32). A record is key_len varint,
//! key bytes, kind byte, value_len varint, value bytes. Empty hash slots
//! are a single zero byte (key_len 0), keeping slot-to-offset arithmetic
//! uniform.

use super::{EntryKind, RecordRef};
use crate::varint::{read_varint, write_varint};
use crate::error::{Error, Result};

/// Encodes one block of slot-ordered entries (`None` marks an empty
/// slot). Fails with `BlockOverflow` if a record would start past the
/// 16-bit offset horizon.
pub fn encode_block(entries: &[Option<RecordRef<'_>>]) -> Result<Vec<u8>> {
    let k = entries.len();
    let mut out = Vec::with_capacity(2 + 2 * k + 64 * k);
    out.extend_from_slice(&(k as u16).to_le_bytes());
    out.resize(2 + 2 * k, 0);
    for (i, entry) in entries.iter().enumerate() {
        let offset = out.len();
        if offset > u16::MAX as usize {
            return Err(Error::BlockOverflow {
                bytes: offset as u64,
            });
        }
        out[2 + 2 * i..4 + 2 * i].copy_from_slice(&(offset as u16).to_le_bytes());
        match entry {
            None => out.push(0),
            Some(r) => {
                debug_assert!(!r.key.is_empty());
                write_varint(&mut out, r.key.len() as u64);
                out.extend_from_slice(r.key);
                out.push(r.kind as u8);
                write_varint(&mut out, r.value.len() as u64);
                out.extend_from_slice(r.value);
            }
        }
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// A decoded block holding its raw bytes; records parse on demand.
#[derive(Debug)]
pub struct Block {
    data: Vec<u8>,
    entry_count: u16,
}

impl Block {
    /// Verifies the checksum and header of one block read off disk.
    pub fn decode(data: Vec<u8>) -> Result<Self> {
        if data.len() < 6 {
            return Err(Error::TruncatedFile { context: "block" });
        }
        let body = &data[..data.len() - 4];
        let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
        if crc32c::crc32c(body) != stored {
            return Err(Error::ChecksumMismatch { context: "block" });
        }
        let entry_count = u16::from_le_bytes(data[0..2].try_into().unwrap());
        if data.len() < 2 + 2 * entry_count as usize + 4 {
            return Err(Error::TruncatedFile { context: "block" });
        }
        Ok(Self { data, entry_count })
    }

    pub fn entry_count(&self) -> usize {
        self.entry_count as usize
    }

    /// Record at `index`; `None` for an empty slot.
    pub fn entry(&self, index: usize) -> Result<Option<RecordRef<'_>>> {
        debug_assert!(index < self.entry_count as usize);
        let off_pos = 2 + 2 * index;
        let offset =
            u16::from_le_bytes(self.data[off_pos..off_pos + 2].try_into().unwrap()) as usize;
        let body = &self.data[..self.data.len() - 4];
        let mut pos = offset;
        let key_len = read_varint(body, &mut pos)? as usize;
        if key_len == 0 {
            return Ok(None);
        }
        if pos + key_len + 1 > body.len() {
            return Err(Error::TruncatedFile { context: "record" });
        }
        let key = &body[pos..pos + key_len];
        pos += key_len;
        let kind = EntryKind::from_byte(body[pos]).ok_or(Error::ChecksumMismatch {
            context: "record kind",
        })?;
        pos += 1;
        let value_len = read_varint(body, &mut pos)? as usize;
        if pos + value_len > body.len() {
            return Err(Error::TruncatedFile { context: "record" });
        }
        let value = &body[pos..pos + value_len];
        Ok(Some(RecordRef { key, kind, value }))
    }

    /// All non-empty records in slot order.
    pub fn records(&self) -> Result<Vec<(usize, RecordRef<'_>)>> {
        let mut out = Vec::new();
        for i in 0..self.entry_count as usize {
            if let Some(r) = self.entry(i)? {
                out.push((i, r));
            }
        }
        Ok(out)
    }
}
