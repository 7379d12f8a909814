//! Counted file I/O.
//!
//! All disk traffic flows through these wrappers so the engine's
//! amplification counters reflect real byte movement. Direct I/O is a
//! per-file flag: reads align the request window to the page size and
//! writes stage into an aligned buffer, padding the final chunk and
//! truncating back to the logical length.

use std::fs::{File, OpenOptions};
use std::os::unix::fs::{FileExt, OpenOptionsExt};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::Result;

const ALIGN: usize = 4096;
const STAGING_BYTES: usize = 1 << 20;

/// Disk-level counters shared across every file the engine touches.
#[derive(Debug, Default)]
pub struct IoCounters {
    pub disk_bytes_read: AtomicU64,
    pub disk_bytes_written: AtomicU64,
    pub block_reads: AtomicU64,
    pub compaction_bytes_read: AtomicU64,
    pub compaction_bytes_written: AtomicU64,
}

impl IoCounters {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    #[inline]
    pub fn count_read(&self, n: u64) {
        self.disk_bytes_read.fetch_add(n, Ordering::Relaxed);
    }

    #[inline]
    pub fn count_write(&self, n: u64) {
        self.disk_bytes_written.fetch_add(n, Ordering::Relaxed);
    }
}

/// Fixed-capacity buffer whose data pointer is page-aligned.
struct AlignedBuf {
    raw: Vec<u8>,
    off: usize,
    cap: usize,
}

impl AlignedBuf {
    fn new(cap: usize) -> Self {
        let raw = vec![0u8; cap + ALIGN];
        let off = (ALIGN - (raw.as_ptr() as usize % ALIGN)) % ALIGN;
        Self { raw, off, cap }
    }

    fn slice(&self, len: usize) -> &[u8] {
        &self.raw[self.off..self.off + len]
    }

    fn slice_mut(&mut self, len: usize) -> &mut [u8] {
        debug_assert!(len <= self.cap);
        &mut self.raw[self.off..self.off + len]
    }
}

/// Read handle over an immutable file with positional reads.
#[derive(Debug)]
pub struct FileReader {
    file: File,
    len: u64,
    direct: bool,
    counters: Arc<IoCounters>,
}

impl FileReader {
    pub fn open(path: &Path, direct: bool, counters: Arc<IoCounters>) -> Result<Self> {
        let mut opts = OpenOptions::new();
        opts.read(true);
        if direct {
            opts.custom_flags(libc::O_DIRECT);
        }
        let file = opts.open(path)?;
        let len = file.metadata()?.len();
        Ok(Self {
            file,
            len,
            direct,
            counters,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    /// Reads exactly `len` bytes starting at `offset`, counting the bytes
    /// actually fetched from the kernel (the aligned window under direct
    /// I/O).
    pub fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        if !self.direct {
            let mut buf = vec![0u8; len];
            self.file.read_exact_at(&mut buf, offset)?;
            self.counters.count_read(len as u64);
            return Ok(buf);
        }
        let start = offset / ALIGN as u64 * ALIGN as u64;
        let end = (offset + len as u64).div_ceil(ALIGN as u64) * ALIGN as u64;
        let end = end.min(self.len.div_ceil(ALIGN as u64) * ALIGN as u64);
        let window = (end - start) as usize;
        let mut aligned = AlignedBuf::new(window);
        // A direct read may legally stop at EOF even mid-window.
        let mut filled = 0usize;
        while filled < window {
            let n = self
                .file
                .read_at(&mut aligned.slice_mut(window)[filled..], start + filled as u64)?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        let skip = (offset - start) as usize;
        if filled < skip + len {
            return Err(crate::error::Error::TruncatedFile {
                context: "direct read",
            });
        }
        self.counters.count_read(filled as u64);
        Ok(aligned.slice(skip + len)[skip..].to_vec())
    }
}

/// Sequential writer producing an immutable file.
///
/// Bytes are staged and handed to the kernel in large chunks; `finish`
/// flushes, fsyncs, and (under direct I/O) truncates the padded tail back
/// to the logical length.
pub struct FileWriter {
    file: File,
    direct: bool,
    staging: Vec<u8>,
    aligned: Option<AlignedBuf>,
    flushed: u64,
    logical: u64,
    counters: Arc<IoCounters>,
    compaction_scope: bool,
}

impl FileWriter {
    pub fn create(
        path: &Path,
        direct: bool,
        counters: Arc<IoCounters>,
        compaction_scope: bool,
    ) -> Result<Self> {
        let mut opts = OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        if direct {
            opts.custom_flags(libc::O_DIRECT);
        }
        let file = opts.open(path)?;
        Ok(Self {
            file,
            direct,
            staging: Vec::with_capacity(STAGING_BYTES),
            aligned: if direct {
                Some(AlignedBuf::new(STAGING_BYTES))
            } else {
                None
            },
            flushed: 0,
            logical: 0,
            counters,
            compaction_scope,
        })
    }

    /// Logical bytes written so far; the next write lands at this offset.
    pub fn position(&self) -> u64 {
        self.logical
    }

    pub fn write_all(&mut self, data: &[u8]) -> Result<()> {
        self.logical += data.len() as u64;
        self.staging.extend_from_slice(data);
        if self.staging.len() >= STAGING_BYTES {
            self.flush_staged(false)?;
        }
        Ok(())
    }

    fn count(&self, n: u64) {
        self.counters.count_write(n);
        if self.compaction_scope {
            self.counters
                .compaction_bytes_written
                .fetch_add(n, Ordering::Relaxed);
        }
    }

    /// Writes staged bytes out. Under direct I/O only multiples of the
    /// page size leave the buffer unless `last` pads the tail.
    fn flush_staged(&mut self, last: bool) -> Result<()> {
        if !self.direct {
            if !self.staging.is_empty() {
                self.file.write_all_at(&self.staging, self.flushed)?;
                self.count(self.staging.len() as u64);
                self.flushed += self.staging.len() as u64;
                self.staging.clear();
            }
            return Ok(());
        }
        let mut emit = self.staging.len() / ALIGN * ALIGN;
        if last && self.staging.len() % ALIGN != 0 {
            self.staging.resize(self.staging.len().div_ceil(ALIGN) * ALIGN, 0);
            emit = self.staging.len();
        }
        let mut done = 0usize;
        while done < emit {
            let chunk = (emit - done).min(STAGING_BYTES);
            let aligned = self.aligned.as_mut().unwrap();
            aligned.slice_mut(chunk).copy_from_slice(&self.staging[done..done + chunk]);
            self.file
                .write_all_at(aligned.slice(chunk), self.flushed)?;
            self.count(chunk as u64);
            self.flushed += chunk as u64;
            done += chunk;
        }
        self.staging.drain(..done);
        Ok(())
    }

    /// Flushes everything, restores the exact logical length, and fsyncs.
    pub fn finish(mut self) -> Result<u64> {
        self.flush_staged(true)?;
        if self.direct && self.flushed > self.logical {
            self.file.set_len(self.logical)?;
        }
        self.file.sync_all()?;
        Ok(self.logical)
    }
}

/// Fsyncs a directory so renames and unlinks inside it are durable.
pub fn fsync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f");
        let counters = IoCounters::new();
        let mut w = FileWriter::create(&path, false, counters.clone(), false).unwrap();
        let payload: Vec<u8> = (0..100_000u32).flat_map(|x| x.to_le_bytes()).collect();
        w.write_all(&payload).unwrap();
        let len = w.finish().unwrap();
        assert_eq!(len, payload.len() as u64);

        let r = FileReader::open(&path, false, counters.clone()).unwrap();
        assert_eq!(r.len(), payload.len() as u64);
        assert_eq!(r.read_at(0, 16).unwrap(), &payload[..16]);
        assert_eq!(
            r.read_at(payload.len() as u64 - 9, 9).unwrap(),
            &payload[payload.len() - 9..]
        );
        assert!(counters.disk_bytes_written.load(Ordering::Relaxed) >= payload.len() as u64);
    }

    #[test]
    fn direct_io_preserves_exact_length_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f");
        let counters = IoCounters::new();
        // 3 pages plus an odd tail.
        let payload: Vec<u8> = (0..(ALIGN * 3 + 777)).map(|i| (i % 251) as u8).collect();
        let mut w = FileWriter::create(&path, true, counters.clone(), false).unwrap();
        for chunk in payload.chunks(1000) {
            w.write_all(chunk).unwrap();
        }
        let len = w.finish().unwrap();
        assert_eq!(len, payload.len() as u64);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), payload.len() as u64);

        let r = FileReader::open(&path, true, counters).unwrap();
        assert_eq!(r.read_at(0, 10).unwrap(), &payload[..10]);
        assert_eq!(
            r.read_at(ALIGN as u64 - 5, 100).unwrap(),
            &payload[ALIGN - 5..ALIGN + 95]
        );
        let tail = payload.len() - 13;
        assert_eq!(r.read_at(tail as u64, 13).unwrap(), &payload[tail..]);
    }
}
