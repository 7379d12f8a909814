//! Write-ahead log: length-prefixed, checksummed records, one log file
//! per memtable generation. Replay stops at the first corrupt or
//! truncated record, which a crash mid-append legitimately produces.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use super::config::WalSyncPolicy;
use crate::error::{Error, Result};
use crate::io::IoCounters;
use crate::piece::EntryKind;

pub fn wal_path(dir: &Path, gen: u64) -> PathBuf {
    dir.join("wal").join(format!("{gen:010}.log"))
}

pub struct WalWriter {
    file: File,
    policy: WalSyncPolicy,
    since_sync: u32,
    counters: Arc<IoCounters>,
}

impl WalWriter {
    pub fn create(dir: &Path, gen: u64, policy: WalSyncPolicy, counters: Arc<IoCounters>) -> Result<Self> {
        let path = wal_path(dir, gen);
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)?;
        Ok(Self {
            file,
            policy,
            since_sync: 0,
            counters,
        })
    }

    /// Appends one record and applies the sync policy.
    pub fn append(&mut self, kind: EntryKind, key: &[u8], value: &[u8]) -> Result<()> {
        let payload_len = 1 + 4 + key.len() + value.len();
        let mut buf = Vec::with_capacity(8 + payload_len);
        buf.extend_from_slice(&(payload_len as u32).to_le_bytes());
        buf.extend_from_slice(&[0u8; 4]); // crc patched below
        buf.push(kind as u8);
        buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
        buf.extend_from_slice(key);
        buf.extend_from_slice(value);
        let crc = crc32c::crc32c(&buf[8..]);
        buf[4..8].copy_from_slice(&crc.to_le_bytes());
        self.file.write_all(&buf)?;
        self.counters
            .disk_bytes_written
            .fetch_add(buf.len() as u64, Ordering::Relaxed);
        match self.policy {
            WalSyncPolicy::Always => self.file.sync_data()?,
            WalSyncPolicy::EveryN(n) => {
                self.since_sync += 1;
                if self.since_sync >= n.max(1) {
                    self.file.sync_data()?;
                    self.since_sync = 0;
                }
            }
            WalSyncPolicy::Never => {}
        }
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_data()?;
        self.since_sync = 0;
        Ok(())
    }
}

/// Replays one log file in order. A clean end, a truncated tail, or a
/// corrupt tail record all terminate replay silently; corruption is only
/// an error if it leaves no parseable prefix of the record stream.
pub fn replay(
    path: &Path,
    counters: &Arc<IoCounters>,
    mut apply: impl FnMut(EntryKind, &[u8], &[u8]),
) -> Result<()> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    counters
        .disk_bytes_read
        .fetch_add(bytes.len() as u64, Ordering::Relaxed);
    let mut pos = 0usize;
    while pos + 8 <= bytes.len() {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        if pos + 8 + len > bytes.len() {
            break; // truncated tail
        }
        let payload = &bytes[pos + 8..pos + 8 + len];
        if crc32c::crc32c(payload) != crc {
            break; // torn tail record
        }
        if len < 5 {
            return Err(Error::WalReplay("record shorter than its header".into()));
        }
        let kind = EntryKind::from_byte(payload[0])
            .ok_or_else(|| Error::WalReplay("bad record kind".into()))?;
        let key_len = u32::from_le_bytes(payload[1..5].try_into().unwrap()) as usize;
        if 5 + key_len > len {
            return Err(Error::WalReplay("key length exceeds record".into()));
        }
        apply(kind, &payload[5..5 + key_len], &payload[5 + key_len..]);
        pos += 8 + len;
    }
    Ok(())
}
