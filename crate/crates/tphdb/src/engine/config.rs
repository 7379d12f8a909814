use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cphash::CpHashConfig;
use crate::error::{Error, Result};
use crate::piece::MAX_PIECES_PER_GROUP;

/// Level organization mode.
///
/// `LeveledHashRange` is the full hierarchy: overlapping groups at level
/// zero, then hash-range-partitioned levels below. `OneLevel` bypasses
/// level zero and merges memtable batches straight into the level-one
/// groups. `SingleTier` is the same layout with the piece limit clamped
/// low, trading compaction reads for less stale data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    LeveledHashRange,
    OneLevel,
    SingleTier,
}

impl std::str::FromStr for EngineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leveled_hash_range" | "leveled" | "hash_range" => Ok(Self::LeveledHashRange),
            "one_level" => Ok(Self::OneLevel),
            "single_tier" => Ok(Self::SingleTier),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for EngineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LeveledHashRange => "leveled_hash_range",
            Self::OneLevel => "one_level",
            Self::SingleTier => "single_tier",
        })
    }
}

/// When the write-ahead log reaches stable storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalSyncPolicy {
    /// Fsync on every write (every acknowledged write survives a crash).
    Always,
    /// Fsync every n-th record.
    EveryN(u32),
    /// Leave syncing to the operating system.
    Never,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub dir: PathBuf,
    pub mode: EngineMode,
    pub memtable_bytes: u64,
    pub max_memtables: usize,
    /// Total levels including level zero.
    pub levels: u32,
    pub fanout: u32,
    pub max_pieces: usize,
    pub invalid_ratio_threshold: f64,
    pub scale_c: f64,
    pub avg_bucket_size: u32,
    pub dense_fraction: f64,
    pub dense_key_fraction: f64,
    pub max_attempts_per_bucket: u32,
    pub growth_step: f64,
    pub segment_count: u32,
    pub sample_interval: u32,
    pub page_size: u32,
    pub direct_io: bool,
    /// 0 draws a fresh random seed when creating a new database; an
    /// existing database always keeps its recorded seed.
    pub hash_seed: u64,
    pub wal_sync: WalSyncPolicy,
    /// Level-zero group count that triggers compaction into level one.
    pub level0_trigger: usize,
    /// Live-byte budget of level one; each deeper level gets ten times
    /// the previous one. 0 derives it from the memtable size.
    pub level1_budget_bytes: u64,
    /// Fail open() if resident index memory exceeds this.
    pub index_memory_cap: Option<u64>,
}

impl EngineConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            mode: EngineMode::LeveledHashRange,
            memtable_bytes: 128 << 20,
            max_memtables: 4,
            levels: 6,
            fanout: 2,
            max_pieces: 16,
            invalid_ratio_threshold: 0.5,
            scale_c: 1.1,
            avg_bucket_size: 5,
            dense_fraction: 0.3,
            dense_key_fraction: 0.6,
            max_attempts_per_bucket: 100_000,
            growth_step: 1.05,
            segment_count: 64,
            sample_interval: 64,
            page_size: 4096,
            direct_io: false,
            hash_seed: 0,
            wal_sync: WalSyncPolicy::Always,
            level0_trigger: 4,
            level1_budget_bytes: 0,
            index_memory_cap: None,
        }
    }

    /// Applies mode defaults and checks the invariants. Called by open().
    pub fn finalize(mut self) -> Result<Self> {
        match self.mode {
            EngineMode::LeveledHashRange => {
                if self.levels < 2 {
                    return Err(Error::InvalidConfig(
                        "leveled mode needs at least two levels".into(),
                    ));
                }
            }
            EngineMode::OneLevel => {
                self.levels = 2;
            }
            EngineMode::SingleTier => {
                self.levels = 2;
                self.max_pieces = self.max_pieces.min(2);
            }
        }
        if self.fanout < 1 {
            return Err(Error::InvalidConfig("fanout must be positive".into()));
        }
        if (self.fanout as u64).saturating_pow(self.levels - 1) > 1 << 32 {
            return Err(Error::InvalidConfig(
                "fanout^levels exceeds the search-key space".into(),
            ));
        }
        if self.max_pieces < 1 || self.max_pieces > MAX_PIECES_PER_GROUP {
            return Err(Error::InvalidConfig(format!(
                "max_pieces must lie in [1, {MAX_PIECES_PER_GROUP}]"
            )));
        }
        if self.segment_count < 1 {
            return Err(Error::InvalidConfig("segment_count must be positive".into()));
        }
        if self.page_size < 512 {
            return Err(Error::InvalidConfig("page_size must be at least 512".into()));
        }
        if self.sample_interval < 1 {
            return Err(Error::InvalidConfig("sample_interval must be positive".into()));
        }
        if self.memtable_bytes < 4096 || self.max_memtables < 1 {
            return Err(Error::InvalidConfig("memtable settings too small".into()));
        }
        if self.level0_trigger < 1 {
            return Err(Error::InvalidConfig("level0_trigger must be positive".into()));
        }
        self.cphash_config().validate()?;
        Ok(self)
    }

    pub fn cphash_config(&self) -> CpHashConfig {
        CpHashConfig {
            scale_c: self.scale_c,
            avg_bucket_size: self.avg_bucket_size,
            dense_fraction: self.dense_fraction,
            dense_key_fraction: self.dense_key_fraction,
            max_attempts_per_bucket: self.max_attempts_per_bucket,
            growth_step: self.growth_step,
            ..CpHashConfig::default()
        }
    }

    /// Index of the deepest level.
    pub fn bottom_level(&self) -> u32 {
        self.levels - 1
    }

    pub fn level_budget(&self, level: u32) -> u64 {
        let base = if self.level1_budget_bytes > 0 {
            self.level1_budget_bytes
        } else {
            self.memtable_bytes.saturating_mul(self.max_memtables as u64)
        };
        base.saturating_mul(10u64.saturating_pow(level.saturating_sub(1)))
    }
}
