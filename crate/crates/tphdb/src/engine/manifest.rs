//! Versioned manifest: the authoritative record of levels, groups, and
//! live files. Commits write a whole new `MANIFEST-<version>` file
//! (length- and checksum-framed), fsync it, then fsync the directory;
//! recovery picks the highest version that decodes cleanly. Files not
//! referenced by the recovered version are garbage.

use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::EngineConfig;
use crate::error::{Error, Result};
use crate::io::{fsync_dir, IoCounters};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PieceEntry {
    pub seq: u64,
    pub file_len: u64,
    pub key_count: u64,
    pub tombstone_count: u64,
    pub raw_kv_bytes: u64,
    /// Records of this piece still referenced by the group index.
    pub referenced: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TphEntry {
    pub tph_id: u64,
    pub level: u32,
    pub index_in_level: u64,
    pub range_lo: u64,
    pub range_hi: u64,
    /// Ascending sequence order; the last piece is the head.
    pub pieces: Vec<PieceEntry>,
    pub live_keys: u64,
    pub live_bytes: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct LevelStats {
    /// Exponentially weighted average record size, feeding block sizing.
    pub avg_kv_ewma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u64,
    pub hash_seed: u64,
    pub hash_scheme: String,
    pub comparator: String,
    pub dense_key_fraction: f64,
    pub config_echo: EngineConfig,
    pub next_tph_id: u64,
    pub next_piece_seq: u64,
    pub next_wal_gen: u64,
    /// Generations still backing unflushed memtables.
    pub live_wal_gens: Vec<u64>,
    /// Outer index: level number. Level-zero entries are ordered oldest
    /// to newest.
    pub levels: Vec<Vec<TphEntry>>,
    pub level_stats: Vec<LevelStats>,
}

impl Manifest {
    pub fn fresh(cfg: &EngineConfig, hash_seed: u64, comparator: &str) -> Self {
        Self {
            version: 0,
            hash_seed,
            hash_scheme: crate::hash::HASH_SCHEME.to_string(),
            comparator: comparator.to_string(),
            dense_key_fraction: cfg.dense_key_fraction,
            config_echo: cfg.clone(),
            next_tph_id: 1,
            next_piece_seq: 1,
            next_wal_gen: 1,
            live_wal_gens: Vec::new(),
            levels: vec![Vec::new(); cfg.levels as usize],
            level_stats: vec![LevelStats::default(); cfg.levels as usize],
        }
    }

    pub fn alloc_tph_id(&mut self) -> u64 {
        let id = self.next_tph_id;
        self.next_tph_id += 1;
        id
    }

    pub fn alloc_piece_seq(&mut self) -> u64 {
        let seq = self.next_piece_seq;
        self.next_piece_seq += 1;
        seq
    }

    pub fn alloc_wal_gen(&mut self) -> u64 {
        let gen = self.next_wal_gen;
        self.next_wal_gen += 1;
        gen
    }

    /// Blends an observed average record size into a level's statistic.
    pub fn update_avg_kv(&mut self, level: u32, observed: u32) {
        if observed == 0 {
            return;
        }
        let stats = &mut self.level_stats[level as usize];
        if stats.avg_kv_ewma <= 0.0 {
            stats.avg_kv_ewma = observed as f64;
        } else {
            stats.avg_kv_ewma = 0.7 * stats.avg_kv_ewma + 0.3 * observed as f64;
        }
    }

    pub fn avg_kv_hint(&self, level: u32) -> u32 {
        self.level_stats
            .get(level as usize)
            .map(|s| s.avg_kv_ewma.round() as u32)
            .unwrap_or(0)
    }
}

fn manifest_path(dir: &Path, version: u64) -> PathBuf {
    dir.join(format!("MANIFEST-{version:010}"))
}

/// Commits a manifest atomically: temp file, fsync, rename, dir fsync.
pub fn commit(dir: &Path, manifest: &Manifest, counters: &Arc<IoCounters>) -> Result<()> {
    let json = serde_json::to_vec(manifest)
        .map_err(|e| Error::CorruptManifest(format!("encode: {e}")))?;
    let mut framed = Vec::with_capacity(json.len() + 8);
    framed.extend_from_slice(&(json.len() as u32).to_le_bytes());
    framed.extend_from_slice(&crc32c::crc32c(&json).to_le_bytes());
    framed.extend_from_slice(&json);
    let tmp = dir.join("MANIFEST-tmp");
    std::fs::write(&tmp, &framed)?;
    std::fs::File::open(&tmp)?.sync_all()?;
    std::fs::rename(&tmp, manifest_path(dir, manifest.version))?;
    fsync_dir(dir)?;
    counters
        .disk_bytes_written
        .fetch_add(framed.len() as u64, Ordering::Relaxed);
    // Drop superseded manifests, keeping one fallback.
    if let Ok(entries) = list_versions(dir) {
        for v in entries.iter().rev().skip(2) {
            let _ = std::fs::remove_file(manifest_path(dir, *v));
        }
    }
    Ok(())
}

fn list_versions(dir: &Path) -> Result<Vec<u64>> {
    let mut versions = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(v) = name.strip_prefix("MANIFEST-") {
            if let Ok(n) = v.parse::<u64>() {
                versions.push(n);
            }
        }
    }
    versions.sort_unstable();
    Ok(versions)
}

fn decode(bytes: &[u8]) -> Result<Manifest> {
    if bytes.len() < 8 {
        return Err(Error::CorruptManifest("too short".into()));
    }
    let len = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let crc = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if bytes.len() < 8 + len {
        return Err(Error::CorruptManifest("truncated".into()));
    }
    let json = &bytes[8..8 + len];
    if crc32c::crc32c(json) != crc {
        return Err(Error::CorruptManifest("checksum mismatch".into()));
    }
    serde_json::from_slice(json).map_err(|e| Error::CorruptManifest(format!("decode: {e}")))
}

/// Recovers the newest intact manifest, if any exists.
pub fn load_latest(dir: &Path, counters: &Arc<IoCounters>) -> Result<Option<Manifest>> {
    let versions = list_versions(dir)?;
    let mut last_err = None;
    for &v in versions.iter().rev() {
        let bytes = std::fs::read(manifest_path(dir, v))?;
        counters
            .disk_bytes_read
            .fetch_add(bytes.len() as u64, Ordering::Relaxed);
        match decode(&bytes) {
            Ok(m) => return Ok(Some(m)),
            Err(e) => last_err = Some(e),
        }
    }
    match last_err {
        Some(e) if versions.len() == 1 => Err(e),
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let counters = IoCounters::new();
        let cfg = EngineConfig::new(dir.path()).finalize().unwrap();
        let mut m = Manifest::fresh(&cfg, 42, "bytewise");
        m.version = 1;
        commit(dir.path(), &m, &counters).unwrap();
        m.version = 2;
        m.next_tph_id = 9;
        commit(dir.path(), &m, &counters).unwrap();
        let loaded = load_latest(dir.path(), &counters).unwrap().unwrap();
        assert_eq!(loaded.version, 2);
        assert_eq!(loaded.next_tph_id, 9);
    }

    #[test]
    fn corrupt_latest_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let counters = IoCounters::new();
        let cfg = EngineConfig::new(dir.path()).finalize().unwrap();
        let mut m = Manifest::fresh(&cfg, 42, "bytewise");
        m.version = 1;
        commit(dir.path(), &m, &counters).unwrap();
        m.version = 2;
        commit(dir.path(), &m, &counters).unwrap();
        // Corrupt version 2; recovery returns version 1.
        let p = manifest_path(dir.path(), 2);
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        std::fs::write(&p, bytes).unwrap();
        let loaded = load_latest(dir.path(), &counters).unwrap().unwrap();
        assert_eq!(loaded.version, 1);
    }
}
