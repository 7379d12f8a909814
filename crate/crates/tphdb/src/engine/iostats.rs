use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::io::IoCounters;

/// Engine-wide instrumentation. Disk counters are shared with every file
/// wrapper; user counters are bumped at the public API.
#[derive(Debug)]
pub struct IoStats {
    pub(crate) disk: Arc<IoCounters>,
    pub(crate) user_bytes_written: AtomicU64,
    pub(crate) user_bytes_read: AtomicU64,
    pub(crate) gets: AtomicU64,
    pub(crate) puts: AtomicU64,
}

impl IoStats {
    pub(crate) fn new(disk: Arc<IoCounters>) -> Self {
        Self {
            disk,
            user_bytes_written: AtomicU64::new(0),
            user_bytes_read: AtomicU64::new(0),
            gets: AtomicU64::new(0),
            puts: AtomicU64::new(0),
        }
    }

    pub fn snapshot(&self) -> IoStatsSnapshot {
        IoStatsSnapshot {
            user_bytes_written: self.user_bytes_written.load(Ordering::Relaxed),
            disk_bytes_written: self.disk.disk_bytes_written.load(Ordering::Relaxed),
            user_bytes_read: self.user_bytes_read.load(Ordering::Relaxed),
            disk_bytes_read: self.disk.disk_bytes_read.load(Ordering::Relaxed),
            block_reads: self.disk.block_reads.load(Ordering::Relaxed),
            gets: self.gets.load(Ordering::Relaxed),
            puts: self.puts.load(Ordering::Relaxed),
            compaction_bytes_read: self.disk.compaction_bytes_read.load(Ordering::Relaxed),
            compaction_bytes_written: self.disk.compaction_bytes_written.load(Ordering::Relaxed),
        }
    }
}

/// Monotone counter snapshot; amplification factors are the quotients of
/// the raw fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct IoStatsSnapshot {
    pub user_bytes_written: u64,
    pub disk_bytes_written: u64,
    pub user_bytes_read: u64,
    pub disk_bytes_read: u64,
    pub block_reads: u64,
    pub gets: u64,
    pub puts: u64,
    pub compaction_bytes_read: u64,
    pub compaction_bytes_written: u64,
}

impl IoStatsSnapshot {
    pub fn write_amplification(&self) -> f64 {
        if self.user_bytes_written == 0 {
            return 0.0;
        }
        self.disk_bytes_written as f64 / self.user_bytes_written as f64
    }

    pub fn read_amplification(&self) -> f64 {
        if self.user_bytes_read == 0 {
            return 0.0;
        }
        self.disk_bytes_read as f64 / self.user_bytes_read as f64
    }

    /// Per-field difference against an earlier snapshot.
    pub fn delta_since(&self, earlier: &IoStatsSnapshot) -> IoStatsSnapshot {
        IoStatsSnapshot {
            user_bytes_written: self.user_bytes_written - earlier.user_bytes_written,
            disk_bytes_written: self.disk_bytes_written - earlier.disk_bytes_written,
            user_bytes_read: self.user_bytes_read - earlier.user_bytes_read,
            disk_bytes_read: self.disk_bytes_read - earlier.disk_bytes_read,
            block_reads: self.block_reads - earlier.block_reads,
            gets: self.gets - earlier.gets,
            puts: self.puts - earlier.puts,
            compaction_bytes_read: self.compaction_bytes_read - earlier.compaction_bytes_read,
            compaction_bytes_written: self.compaction_bytes_written
                - earlier.compaction_bytes_written,
        }
    }
}
