//! The embedded store: memtable + write-ahead log in front of leveled
//! groups of piece files, with atomic manifest commits, crash recovery,
//! and instrumented I/O.
//!
//! Writes append to the log, land in the active memtable, and trigger
//! flush/merge work inline once buffers fill. Readers work on snapshots
//! (immutable handles swapped under a short lock) and never wait on
//! flushes or merges in progress.

mod config;
mod iostats;
mod manifest;
mod memtable;
mod wal;

pub use config::{EngineConfig, EngineMode, WalSyncPolicy};
pub use iostats::{IoStats, IoStatsSnapshot};
pub use manifest::{Manifest, PieceEntry, TphEntry};

use std::collections::HashMap;
use std::fs::File;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::compaction::{
    self, extract_live, merge, DeltaRecord, GcPolicy, HashRangeLayout, MergeConfig, MergeOutcome,
    PlanInput, PlannedJob, TphSummary, SEARCH_KEY_SPACE,
};
use crate::comparator::{BytewiseComparator, ComparatorRef};
use crate::error::{Error, Result};
use crate::hash::{key_hash, search_key};
use crate::io::IoCounters;
use crate::piece::EntryKind;
use crate::tph::{GetOutcome, ResidentIndexBytes, TphHandle, TphIter, TphOptions};
use memtable::MemTable;
use wal::WalWriter;

struct MemSnapshot {
    active: Arc<RwLock<MemTable>>,
    /// Frozen memtables, oldest first. Never written again.
    immutables: Vec<Arc<RwLock<MemTable>>>,
}

struct TableVersion {
    /// levels[0] ordered oldest to newest; deeper levels sorted by
    /// index_in_level.
    levels: Vec<Vec<Arc<TphHandle>>>,
}

struct WriteState {
    manifest: Manifest,
    wal: WalWriter,
}

/// The embedded key-value store.
pub struct Engine {
    cfg: EngineConfig,
    dir: PathBuf,
    seed: u64,
    cmp: ComparatorRef,
    layout: HashRangeLayout,
    counters: Arc<IoCounters>,
    stats: IoStats,
    write: Mutex<WriteState>,
    mem: RwLock<MemSnapshot>,
    tables: RwLock<Arc<TableVersion>>,
    stopped: AtomicBool,
    _lock: File,
}

fn random_seed() -> Result<u64> {
    use std::io::Read;
    let mut buf = [0u8; 8];
    File::open("/dev/urandom")?.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn tph_dir(dir: &Path, tph_id: u64) -> PathBuf {
    dir.join("tph").join(format!("{tph_id:08}"))
}

impl Engine {
    /// Opens or creates a store in `config.dir`; recovers the manifest,
    /// replays the write-ahead log, and loads every group index.
    pub fn open(config: EngineConfig) -> Result<Engine> {
        Self::open_with_comparator(config, Arc::new(BytewiseComparator))
    }

    pub fn open_with_comparator(config: EngineConfig, cmp: ComparatorRef) -> Result<Engine> {
        let cfg = config.finalize()?;
        let dir = cfg.dir.clone();
        std::fs::create_dir_all(&dir)?;
        std::fs::create_dir_all(dir.join("wal"))?;
        std::fs::create_dir_all(dir.join("tph"))?;

        let lock_file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join("LOCK"))?;
        if unsafe { libc::flock(lock_file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) } != 0 {
            return Err(Error::LockHeld(dir.join("LOCK")));
        }

        let counters = IoCounters::new();
        let mut fresh = false;
        let mut man = match manifest::load_latest(&dir, &counters)? {
            Some(m) => m,
            None => {
                fresh = true;
                let seed = if cfg.hash_seed != 0 {
                    cfg.hash_seed
                } else {
                    random_seed()?
                };
                Manifest::fresh(&cfg, seed, cmp.name())
            }
        };
        if man.hash_scheme != crate::hash::HASH_SCHEME {
            return Err(Error::InvalidConfig(format!(
                "database was written with hash scheme `{}`",
                man.hash_scheme
            )));
        }
        if man.comparator != cmp.name() {
            return Err(Error::InvalidConfig(format!(
                "database comparator is `{}`, engine configured with `{}`",
                man.comparator,
                cmp.name()
            )));
        }
        // Format-critical fields always come from the manifest.
        let seed = man.hash_seed;
        let mut cfg = cfg;
        cfg.dense_key_fraction = man.dense_key_fraction;
        for level in man.levels.iter().skip(cfg.levels as usize) {
            if !level.is_empty() {
                return Err(Error::InvalidConfig(
                    "existing database holds deeper levels than the configured mode allows".into(),
                ));
            }
        }
        man.levels.resize(cfg.levels as usize, Vec::new());
        man.level_stats
            .resize(cfg.levels as usize, Default::default());
        man.config_echo = cfg.clone();

        // Load group handles.
        let opts = TphOptions {
            seed,
            dense_key_fraction: cfg.dense_key_fraction,
            direct_io: cfg.direct_io,
        };
        let mut levels: Vec<Vec<Arc<TphHandle>>> = Vec::with_capacity(man.levels.len());
        for level in &man.levels {
            let mut handles = Vec::with_capacity(level.len());
            for entry in level {
                let seqs: Vec<u64> = entry.pieces.iter().map(|p| p.seq).collect();
                handles.push(Arc::new(TphHandle::load(
                    &tph_dir(&dir, entry.tph_id),
                    entry.tph_id,
                    entry.level,
                    entry.index_in_level,
                    (entry.range_lo, entry.range_hi),
                    &seqs,
                    opts,
                    counters.clone(),
                )?));
            }
            levels.push(handles);
        }

        // Unreferenced piece files and group directories are garbage from
        // an interrupted job; remove them.
        let mut referenced: std::collections::HashSet<PathBuf> = std::collections::HashSet::new();
        for level in &man.levels {
            for entry in level {
                for p in &entry.pieces {
                    referenced.insert(crate::tph::piece_path(&tph_dir(&dir, entry.tph_id), p.seq));
                }
            }
        }
        for group in std::fs::read_dir(dir.join("tph"))? {
            let group = group?.path();
            if !group.is_dir() {
                continue;
            }
            for f in std::fs::read_dir(&group)? {
                let f = f?.path();
                if f.extension().and_then(|e| e.to_str()) == Some(crate::piece::PIECE_EXT)
                    && !referenced.contains(&f)
                {
                    std::fs::remove_file(&f)?;
                }
            }
            if std::fs::read_dir(&group)?.next().is_none() {
                std::fs::remove_dir(&group)?;
            }
        }
        let _ = std::fs::remove_file(dir.join("MANIFEST-tmp"));

        // Replay every log present, oldest first, into a fresh memtable.
        let mut wal_gens: Vec<u64> = Vec::new();
        for entry in std::fs::read_dir(dir.join("wal"))? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".log") {
                if let Ok(gen) = stem.parse::<u64>() {
                    wal_gens.push(gen);
                }
            }
        }
        wal_gens.sort_unstable();
        let new_gen = man
            .next_wal_gen
            .max(wal_gens.last().map(|g| g + 1).unwrap_or(1));
        man.next_wal_gen = new_gen + 1;
        let mut active = MemTable::new(cmp.clone(), new_gen);
        for &gen in &wal_gens {
            wal::replay(&wal::wal_path(&dir, gen), &counters, |kind, key, value| {
                active.insert(key, kind, value.to_vec());
            })?;
        }
        active.wal_gens = wal_gens;
        active.wal_gens.push(new_gen);
        man.live_wal_gens = active.wal_gens.clone();
        let wal = WalWriter::create(&dir, new_gen, cfg.wal_sync, counters.clone())?;

        if fresh {
            man.version = 1;
            manifest::commit(&dir, &man, &counters)?;
        }

        let engine = Engine {
            layout: HashRangeLayout::new(cfg.fanout),
            seed,
            cmp,
            counters: counters.clone(),
            stats: IoStats::new(counters),
            write: Mutex::new(WriteState { manifest: man, wal }),
            mem: RwLock::new(MemSnapshot {
                active: Arc::new(RwLock::new(active)),
                immutables: Vec::new(),
            }),
            tables: RwLock::new(Arc::new(TableVersion { levels })),
            stopped: AtomicBool::new(false),
            _lock: lock_file,
            dir,
            cfg,
        };
        if let Some(cap) = engine.cfg.index_memory_cap {
            let resident = engine.resident_index_bytes().budget_total();
            if resident > cap {
                return Err(Error::IndexMemoryBudget { resident, cap });
            }
        }
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn comparator(&self) -> &ComparatorRef {
        &self.cmp
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.write_record(key, EntryKind::Put, value)
    }

    /// Writes a tombstone; the key reads as absent from here on.
    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.write_record(key, EntryKind::Tombstone, &[])
    }

    fn write_record(&self, key: &[u8], kind: EntryKind, value: &[u8]) -> Result<()> {
        if self.stopped.load(Ordering::Acquire) {
            return Err(Error::Stopped);
        }
        if key.is_empty() {
            return Err(Error::EmptyKey);
        }
        let mut w = self.write.lock().unwrap();
        w.wal.append(kind, key, value)?;
        let (bytes, full) = {
            let mem = self.mem.read().unwrap();
            let active = mem.active.clone();
            drop(mem);
            let mut guard = active.write().unwrap();
            guard.insert(key, kind, value.to_vec());
            (
                guard.approximate_bytes(),
                guard.approximate_bytes() >= self.cfg.memtable_bytes,
            )
        };
        let _ = bytes;
        self.stats.puts.fetch_add(1, Ordering::Relaxed);
        self.stats
            .user_bytes_written
            .fetch_add((key.len() + value.len()) as u64, Ordering::Relaxed);
        if full {
            self.rotate_active(&mut w)?;
            self.flush_if_due(&mut w)?;
        }
        Ok(())
    }

    /// Freezes the active memtable and starts a new one on a fresh log.
    fn rotate_active(&self, w: &mut WriteState) -> Result<()> {
        let gen = {
            let mem = self.mem.read().unwrap();
            if mem.active.read().unwrap().is_empty() {
                return Ok(());
            }
            w.manifest.next_wal_gen
        };
        w.manifest.next_wal_gen += 1;
        let new_wal = WalWriter::create(&self.dir, gen, self.cfg.wal_sync, self.counters.clone())?;
        let old_wal = std::mem::replace(&mut w.wal, new_wal);
        drop(old_wal);
        let mut mem = self.mem.write().unwrap();
        let old_active = std::mem::replace(
            &mut mem.active,
            Arc::new(RwLock::new(MemTable::new(self.cmp.clone(), gen))),
        );
        mem.immutables.push(old_active);
        Ok(())
    }

    fn flush_if_due(&self, w: &mut WriteState) -> Result<()> {
        let pending = self.mem.read().unwrap().immutables.len();
        let due = match self.cfg.mode {
            EngineMode::LeveledHashRange => pending >= 1,
            // Batch several memtables, then bypass level zero.
            EngineMode::OneLevel | EngineMode::SingleTier => pending >= self.cfg.max_memtables,
        };
        if due {
            self.flush_immutables(w)?;
            self.run_maintenance(w)?;
        }
        Ok(())
    }

    /// Forces buffered writes into groups and runs pending merges.
    pub fn flush(&self) -> Result<()> {
        if self.stopped.load(Ordering::Acquire) {
            return Err(Error::Stopped);
        }
        let mut w = self.write.lock().unwrap();
        self.rotate_active(&mut w)?;
        self.flush_immutables(&mut w)?;
        self.run_maintenance(&mut w)?;
        Ok(())
    }

    /// Runs pending merge work until the plan is empty.
    pub fn maintain(&self) -> Result<()> {
        if self.stopped.load(Ordering::Acquire) {
            return Err(Error::Stopped);
        }
        let mut w = self.write.lock().unwrap();
        self.run_maintenance(&mut w)?;
        Ok(())
    }

    fn merge_cfg<'a>(
        &'a self,
        dir: &'a Path,
        tph_id: u64,
        seq: u64,
        range: (u64, u64),
        bottom: bool,
        avg_kv_hint: u32,
    ) -> MergeConfig<'a> {
        MergeConfig {
            dir,
            tph_id,
            new_piece_seq: seq,
            range,
            bottom_level: bottom,
            comparator: self.cmp.as_ref(),
            seed: self.seed,
            cphash: self.cfg.cphash_config(),
            segment_count: self.cfg.segment_count,
            page_size: self.cfg.page_size,
            sample_interval: self.cfg.sample_interval,
            avg_kv_hint,
            direct_io: self.cfg.direct_io,
            policy: GcPolicy {
                max_pieces: self.cfg.max_pieces,
                invalid_ratio_threshold: self.cfg.invalid_ratio_threshold,
            },
            counters: self.counters.clone(),
        }
    }

    fn entry_from_outcome(
        base: Option<&TphEntry>,
        tph_id: u64,
        level: u32,
        index_in_level: u64,
        range: (u64, u64),
        outcome: &MergeOutcome,
    ) -> TphEntry {
        let mut pieces = Vec::with_capacity(outcome.surviving_seqs.len() + 1);
        if let Some(base) = base {
            let by_seq: HashMap<u64, &PieceEntry> =
                base.pieces.iter().map(|p| (p.seq, p)).collect();
            for (pos, seq) in outcome.surviving_seqs.iter().enumerate() {
                let mut entry = (*by_seq[seq]).clone();
                entry.referenced = outcome.piece_refs[pos];
                pieces.push(entry);
            }
        }
        pieces.push(PieceEntry {
            seq: outcome.new_seq,
            file_len: outcome.written.file_len,
            key_count: outcome.written.footer.key_count,
            tombstone_count: outcome.written.footer.tombstone_count,
            raw_kv_bytes: outcome.written.footer.raw_kv_bytes,
            referenced: *outcome.piece_refs.last().unwrap_or(&0),
        });
        TphEntry {
            tph_id,
            level,
            index_in_level,
            range_lo: range.0,
            range_hi: range.1,
            pieces,
            live_keys: outcome.live_keys,
            live_bytes: outcome.live_bytes,
        }
    }

    fn load_handle(&self, entry: &TphEntry) -> Result<Arc<TphHandle>> {
        let seqs: Vec<u64> = entry.pieces.iter().map(|p| p.seq).collect();
        Ok(Arc::new(TphHandle::load(
            &tph_dir(&self.dir, entry.tph_id),
            entry.tph_id,
            entry.level,
            entry.index_in_level,
            (entry.range_lo, entry.range_hi),
            &seqs,
            TphOptions {
                seed: self.seed,
                dense_key_fraction: self.cfg.dense_key_fraction,
                direct_io: self.cfg.direct_io,
            },
            self.counters.clone(),
        )?))
    }

    /// Drains frozen memtables into groups; target depends on the mode.
    /// Consumed log files are deleted only after the manifest commit and
    /// after the memtable leaves the read snapshot.
    fn flush_immutables(&self, w: &mut WriteState) -> Result<()> {
        match self.cfg.mode {
            EngineMode::LeveledHashRange => loop {
                let imm = {
                    let mem = self.mem.read().unwrap();
                    mem.immutables.first().cloned()
                };
                let Some(imm) = imm else { break };
                let gens = self.flush_one_to_level0(w, &imm)?;
                {
                    let mut mem = self.mem.write().unwrap();
                    mem.immutables.remove(0);
                }
                self.drop_wal_gens(w, &gens)?;
            },
            EngineMode::OneLevel | EngineMode::SingleTier => {
                let imms: Vec<_> = {
                    let mem = self.mem.read().unwrap();
                    mem.immutables.clone()
                };
                if imms.is_empty() {
                    return Ok(());
                }
                let gens = self.flush_batch_to_level1(w, &imms)?;
                {
                    let mut mem = self.mem.write().unwrap();
                    mem.immutables.clear();
                }
                self.drop_wal_gens(w, &gens)?;
            }
        }
        Ok(())
    }

    fn flush_one_to_level0(
        &self,
        w: &mut WriteState,
        imm: &Arc<RwLock<MemTable>>,
    ) -> Result<Vec<u64>> {
        let guard = imm.read().unwrap();
        let wal_gens = guard.wal_gens.clone();
        if guard.is_empty() {
            return Ok(wal_gens);
        }
        let records: Vec<DeltaRecord> = guard
            .records()
            .map(|(k, kind, v)| DeltaRecord {
                key: k.to_vec(),
                kind,
                value: v.to_vec(),
            })
            .collect();
        let observed_avg = guard.observed_avg_kv();
        drop(guard);

        let tph_id = w.manifest.alloc_tph_id();
        let seq = w.manifest.alloc_piece_seq();
        let dir = tph_dir(&self.dir, tph_id);
        std::fs::create_dir_all(&dir)?;
        let hint = {
            let h = w.manifest.avg_kv_hint(0);
            if h > 0 {
                h
            } else {
                observed_avg
            }
        };
        let bottom = self.cfg.levels == 1;
        let cfg = self.merge_cfg(&dir, tph_id, seq, (0, SEARCH_KEY_SPACE), bottom, hint);
        let outcome = merge(&cfg, records, None)?;
        w.manifest.update_avg_kv(0, outcome.observed_avg_kv);
        let entry = Self::entry_from_outcome(None, tph_id, 0, 0, (0, SEARCH_KEY_SPACE), &outcome);
        w.manifest.levels[0].push(entry.clone());
        self.commit_and_install(w, &[entry], &[], &[])?;
        Ok(wal_gens)
    }

    fn flush_batch_to_level1(
        &self,
        w: &mut WriteState,
        imms: &[Arc<RwLock<MemTable>>],
    ) -> Result<Vec<u64>> {
        // Newest version per key across the batch: later memtables win.
        let mut merged: HashMap<Vec<u8>, (EntryKind, Vec<u8>)> = HashMap::new();
        let mut wal_gens = Vec::new();
        let mut observed_avg = 0u32;
        for imm in imms {
            let guard = imm.read().unwrap();
            wal_gens.extend_from_slice(&guard.wal_gens);
            if guard.observed_avg_kv() > 0 {
                observed_avg = guard.observed_avg_kv();
            }
            for (k, kind, v) in guard.records() {
                merged.insert(k.to_vec(), (kind, v.to_vec()));
            }
        }
        if merged.is_empty() {
            return Ok(wal_gens);
        }
        let hint = {
            let h = w.manifest.avg_kv_hint(1);
            if h > 0 {
                h
            } else {
                observed_avg
            }
        };
        let records: Vec<DeltaRecord> = merged
            .into_iter()
            .map(|(key, (kind, value))| DeltaRecord { key, kind, value })
            .collect();
        self.merge_into_level(w, 1, records, hint)?;
        Ok(wal_gens)
    }

    /// Partitions records by the target level's ranges and merges each
    /// partition into its owning group. One manifest commit covers the
    /// whole batch.
    fn merge_into_level(
        &self,
        w: &mut WriteState,
        level: u32,
        records: Vec<DeltaRecord>,
        avg_kv_hint: u32,
    ) -> Result<Vec<u64>> {
        let mut partitions: HashMap<u64, Vec<DeltaRecord>> = HashMap::new();
        for rec in records {
            let sk = search_key(key_hash(&rec.key, self.seed));
            partitions
                .entry(self.layout.owner_index(level, sk))
                .or_default()
                .push(rec);
        }
        let bottom = level == self.cfg.bottom_level();
        let mut changed_entries = Vec::new();
        let mut deleted_files = Vec::new();
        let tables = self.tables.read().unwrap().clone();
        let mut indices: Vec<u64> = partitions.keys().copied().collect();
        indices.sort_unstable();
        let mut observed = 0u32;
        for index in indices {
            let delta = partitions.remove(&index).unwrap();
            let range = self.layout.range_at(level, index);
            let existing = w.manifest.levels[level as usize]
                .iter()
                .find(|e| e.index_in_level == index)
                .cloned();
            let (tph_id, base_handle) = match &existing {
                Some(entry) => (
                    entry.tph_id,
                    tables.levels[level as usize]
                        .iter()
                        .find(|h| h.tph_id == entry.tph_id)
                        .cloned(),
                ),
                None => (w.manifest.alloc_tph_id(), None),
            };
            let dir = tph_dir(&self.dir, tph_id);
            std::fs::create_dir_all(&dir)?;
            let seq = w.manifest.alloc_piece_seq();
            let cfg = self.merge_cfg(&dir, tph_id, seq, range, bottom, avg_kv_hint);
            let outcome = merge(&cfg, delta, base_handle.as_deref())?;
            observed = outcome.observed_avg_kv.max(observed);
            for seq in &outcome.deleted_seqs {
                deleted_files.push(crate::tph::piece_path(&dir, *seq));
            }
            let entry = Self::entry_from_outcome(
                existing.as_ref(),
                tph_id,
                level,
                index,
                range,
                &outcome,
            );
            match w.manifest.levels[level as usize]
                .iter_mut()
                .find(|e| e.index_in_level == index)
            {
                Some(slot) => *slot = entry.clone(),
                None => {
                    w.manifest.levels[level as usize].push(entry.clone());
                    w.manifest.levels[level as usize].sort_by_key(|e| e.index_in_level);
                }
            }
            changed_entries.push(entry);
        }
        w.manifest.update_avg_kv(level, observed);
        self.commit_and_install(w, &changed_entries, &[], &deleted_files)?;
        Ok(changed_entries.iter().map(|e| e.tph_id).collect())
    }

    /// Commits the manifest, swaps updated handles into the read
    /// snapshot, and only then deletes dead files.
    fn commit_and_install(
        &self,
        w: &mut WriteState,
        changed: &[TphEntry],
        removed_tph_ids: &[u64],
        dead_files: &[PathBuf],
    ) -> Result<()> {
        w.manifest.version += 1;
        w.manifest.live_wal_gens = self.live_gens();
        manifest::commit(&self.dir, &w.manifest, &self.counters)?;

        let mut new_levels: Vec<Vec<Arc<TphHandle>>> = {
            let current = self.tables.read().unwrap();
            current.levels.clone()
        };
        new_levels.resize(self.cfg.levels as usize, Vec::new());
        for level in new_levels.iter_mut() {
            level.retain(|h| !removed_tph_ids.contains(&h.tph_id));
        }
        for entry in changed {
            let handle = self.load_handle(entry)?;
            let level = &mut new_levels[entry.level as usize];
            match level.iter_mut().find(|h| h.tph_id == entry.tph_id) {
                Some(slot) => *slot = handle,
                None => level.push(handle),
            }
            if entry.level > 0 {
                new_levels[entry.level as usize].sort_by_key(|h| h.index_in_level);
            }
        }
        *self.tables.write().unwrap() = Arc::new(TableVersion { levels: new_levels });

        for path in dead_files {
            let _ = std::fs::remove_file(path);
        }
        for id in removed_tph_ids {
            let _ = std::fs::remove_dir_all(tph_dir(&self.dir, *id));
        }
        Ok(())
    }

    fn live_gens(&self) -> Vec<u64> {
        let mem = self.mem.read().unwrap();
        let mut gens: Vec<u64> = mem
            .immutables
            .iter()
            .flat_map(|m| m.read().unwrap().wal_gens.clone())
            .collect();
        gens.extend(mem.active.read().unwrap().wal_gens.clone());
        gens
    }

    fn drop_wal_gens(&self, w: &mut WriteState, gens: &[u64]) -> Result<()> {
        let keep = self.live_gens();
        for gen in gens {
            if !keep.contains(gen) {
                let _ = std::fs::remove_file(wal::wal_path(&self.dir, *gen));
            }
        }
        w.manifest.live_wal_gens = keep;
        Ok(())
    }

    fn plan_summaries(&self, w: &WriteState) -> Vec<Vec<TphSummary>> {
        w.manifest
            .levels
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|e| {
                        let max_invalid_ratio = e
                            .pieces
                            .iter()
                            .map(|p| {
                                let records = p.key_count + p.tombstone_count;
                                if records == 0 {
                                    0.0
                                } else {
                                    // Stale fraction estimate per piece.
                                    1.0 - (p.referenced as f64 / records as f64)
                                }
                            })
                            .fold(0.0f64, f64::max);
                        TphSummary {
                            tph_id: e.tph_id,
                            index_in_level: e.index_in_level,
                            piece_count: e.pieces.len(),
                            live_bytes: e.live_bytes,
                            max_invalid_ratio,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn run_maintenance(&self, w: &mut WriteState) -> Result<()> {
        loop {
            let summaries = self.plan_summaries(w);
            let budgets: Vec<u64> = (0..self.cfg.levels)
                .map(|l| self.cfg.level_budget(l))
                .collect();
            let jobs = compaction::plan(&PlanInput {
                levels: &summaries,
                level0_trigger: self.cfg.level0_trigger,
                level_budgets: &budgets,
                policy: GcPolicy {
                    max_pieces: self.cfg.max_pieces,
                    invalid_ratio_threshold: self.cfg.invalid_ratio_threshold,
                },
                bottom_level: self.cfg.bottom_level(),
            });
            let Some(job) = jobs.into_iter().next() else {
                return Ok(());
            };
            match job {
                PlannedJob::Rewrite { level, tph_id } => self.execute_rewrite(w, level, tph_id)?,
                PlannedJob::CompactLevel0 { source_tph_ids } => {
                    self.execute_level0_compaction(w, &source_tph_ids)?
                }
                PlannedJob::PushDown { level, tph_id } => {
                    self.execute_push_down(w, level, tph_id)?
                }
            }
        }
    }

    fn handle_of(&self, level: u32, tph_id: u64) -> Result<Arc<TphHandle>> {
        let tables = self.tables.read().unwrap();
        tables.levels[level as usize]
            .iter()
            .find(|h| h.tph_id == tph_id)
            .cloned()
            .ok_or_else(|| Error::CorruptManifest(format!("group {tph_id} missing at level {level}")))
    }

    fn execute_rewrite(&self, w: &mut WriteState, level: u32, tph_id: u64) -> Result<()> {
        let handle = self.handle_of(level, tph_id)?;
        let existing = w.manifest.levels[level as usize]
            .iter()
            .find(|e| e.tph_id == tph_id)
            .cloned()
            .ok_or_else(|| Error::CorruptManifest("rewrite target missing".into()))?;
        let dir = tph_dir(&self.dir, tph_id);
        let seq = w.manifest.alloc_piece_seq();
        let bottom = level == self.cfg.bottom_level();
        let hint = w.manifest.avg_kv_hint(level);
        let cfg = self.merge_cfg(
            &dir,
            tph_id,
            seq,
            (existing.range_lo, existing.range_hi),
            bottom,
            hint,
        );
        let outcome = merge(&cfg, Vec::new(), Some(&handle))?;
        let dead: Vec<PathBuf> = outcome
            .deleted_seqs
            .iter()
            .map(|s| crate::tph::piece_path(&dir, *s))
            .collect();
        let entry = Self::entry_from_outcome(
            Some(&existing),
            tph_id,
            level,
            existing.index_in_level,
            (existing.range_lo, existing.range_hi),
            &outcome,
        );
        *w.manifest.levels[level as usize]
            .iter_mut()
            .find(|e| e.tph_id == tph_id)
            .unwrap() = entry.clone();
        self.commit_and_install(w, &[entry], &[], &dead)
    }

    fn execute_level0_compaction(&self, w: &mut WriteState, source_ids: &[u64]) -> Result<()> {
        // Newest level-0 group first; first version of a key wins.
        let mut merged: HashMap<Vec<u8>, DeltaRecord> = HashMap::new();
        let handles: Vec<Arc<TphHandle>> = {
            let tables = self.tables.read().unwrap();
            tables.levels[0]
                .iter()
                .filter(|h| source_ids.contains(&h.tph_id))
                .cloned()
                .collect()
        };
        for handle in handles.iter().rev() {
            for rec in extract_live(handle)? {
                merged.entry(rec.key.clone()).or_insert(rec);
            }
        }
        let records: Vec<DeltaRecord> = merged.into_values().collect();
        let hint = w.manifest.avg_kv_hint(1).max(w.manifest.avg_kv_hint(0));
        // Merge into level 1, then drop the consumed level-0 groups.
        let mut partitions_done = false;
        if !records.is_empty() {
            self.merge_into_level(w, 1, records, hint)?;
            partitions_done = true;
        }
        let _ = partitions_done;
        w.manifest.levels[0].retain(|e| !source_ids.contains(&e.tph_id));
        self.commit_and_install(w, &[], source_ids, &[])?;
        Ok(())
    }

    fn execute_push_down(&self, w: &mut WriteState, level: u32, tph_id: u64) -> Result<()> {
        let handle = self.handle_of(level, tph_id)?;
        let records = extract_live(&handle)?;
        let hint = w.manifest.avg_kv_hint(level + 1).max(w.manifest.avg_kv_hint(level));
        if !records.is_empty() {
            self.merge_into_level(w, level + 1, records, hint)?;
        }
        w.manifest.levels[level as usize].retain(|e| e.tph_id != tph_id);
        self.commit_and_install(w, &[], &[tph_id], &[])?;
        Ok(())
    }

    /// Point lookup: memtables, then level zero newest-first, then the
    /// one range-owning group per deeper level. The first definitive
    /// answer wins.
    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        if self.stopped.load(Ordering::Acquire) {
            return Err(Error::Stopped);
        }
        self.stats.gets.fetch_add(1, Ordering::Relaxed);
        {
            let mem = self.mem.read().unwrap();
            let found = mem.active.read().unwrap().get(key).map(|(k, v)| (k, v.to_vec()));
            if let Some((kind, value)) = found {
                return Ok(self.count_read_hit(key, kind, value));
            }
            for imm in mem.immutables.iter().rev() {
                let found = imm.read().unwrap().get(key).map(|(k, v)| (k, v.to_vec()));
                if let Some((kind, value)) = found {
                    return Ok(self.count_read_hit(key, kind, value));
                }
            }
        }
        let kh = key_hash(key, self.seed);
        let tables = self.tables.read().unwrap().clone();
        for tph in tables.levels[0].iter().rev() {
            match tph.get_hashed(key, kh)? {
                GetOutcome::Found(v) => return Ok(self.count_read_hit(key, EntryKind::Put, v)),
                GetOutcome::Deleted => return Ok(None),
                GetOutcome::NotFound => {}
            }
        }
        let sk = search_key(kh);
        for (level, groups) in tables.levels.iter().enumerate().skip(1) {
            let index = self.layout.owner_index(level as u32, sk);
            let Ok(pos) = groups.binary_search_by_key(&index, |h| h.index_in_level) else {
                continue;
            };
            match groups[pos].get_hashed(key, kh)? {
                GetOutcome::Found(v) => return Ok(self.count_read_hit(key, EntryKind::Put, v)),
                GetOutcome::Deleted => return Ok(None),
                GetOutcome::NotFound => {}
            }
        }
        Ok(None)
    }

    fn count_read_hit(&self, key: &[u8], kind: EntryKind, value: Vec<u8>) -> Option<Vec<u8>> {
        match kind {
            EntryKind::Put => {
                self.stats
                    .user_bytes_read
                    .fetch_add((key.len() + value.len()) as u64, Ordering::Relaxed);
                Some(value)
            }
            EntryKind::Tombstone => None,
        }
    }

    /// Ordered merge across memtables and every group; newest version per
    /// key, tombstones suppressed. `end` is exclusive; `None` scans to
    /// the end.
    pub fn iterate(&self, start: &[u8], end: Option<&[u8]>) -> Result<Iter<'_>> {
        if self.stopped.load(Ordering::Acquire) {
            return Err(Error::Stopped);
        }
        if let Some(end) = end {
            if self.cmp.compare(start, end) == std::cmp::Ordering::Greater {
                return Err(Error::InvalidConfig("iterate start exceeds end".into()));
            }
        }
        let mut sources: Vec<Source> = Vec::new();
        {
            let mem = self.mem.read().unwrap();
            let items = mem.active.read().unwrap().collect_from(start);
            sources.push(Source::Mem { items, pos: 0 });
            for imm in mem.immutables.iter().rev() {
                let items = imm.read().unwrap().collect_from(start);
                sources.push(Source::Mem { items, pos: 0 });
            }
        }
        let tables = self.tables.read().unwrap().clone();
        for tph in tables.levels[0].iter().rev() {
            sources.push(Source::Tph {
                iter: TphIter::seek(tph.clone(), start, self.cmp.as_ref())?,
                peeked: None,
                primed: false,
            });
        }
        for groups in tables.levels.iter().skip(1) {
            for tph in groups {
                sources.push(Source::Tph {
                    iter: TphIter::seek(tph.clone(), start, self.cmp.as_ref())?,
                    peeked: None,
                    primed: false,
                });
            }
        }
        Ok(Iter {
            engine: self,
            sources,
            end: end.map(|e| e.to_vec()),
        })
    }

    /// Consistent counter snapshot.
    pub fn stats(&self) -> IoStatsSnapshot {
        self.stats.snapshot()
    }

    /// Resident index memory across every loaded group.
    pub fn resident_index_bytes(&self) -> ResidentIndexBytes {
        let tables = self.tables.read().unwrap();
        let mut total = ResidentIndexBytes::default();
        for level in &tables.levels {
            for tph in level {
                let b = tph.resident_breakdown();
                total.global_params += b.global_params;
                total.signatures += b.signatures;
                total.piece_table += b.piece_table;
                total.local_params += b.local_params;
                total.block_offsets += b.block_offsets;
                total.samples += b.samples;
            }
        }
        total
    }

    /// Live keys across all groups (memtables excluded).
    pub fn live_table_keys(&self) -> u64 {
        let tables = self.tables.read().unwrap();
        tables
            .levels
            .iter()
            .flatten()
            .map(|t| t.live_keys())
            .sum()
    }

    /// Piece counts per level, for reports.
    pub fn piece_counts(&self) -> Vec<Vec<usize>> {
        let tables = self.tables.read().unwrap();
        tables
            .levels
            .iter()
            .map(|level| level.iter().map(|t| t.pieces().len()).collect())
            .collect()
    }

    /// Stops accepting writes and syncs the log. Reads keep working.
    pub fn close(&self) -> Result<()> {
        self.stopped.store(true, Ordering::Release);
        let mut w = self.write.lock().unwrap();
        w.wal.sync()
    }
}

enum Source {
    Mem {
        items: Vec<(Vec<u8>, EntryKind, Vec<u8>)>,
        pos: usize,
    },
    Tph {
        iter: TphIter,
        peeked: Option<(Vec<u8>, EntryKind, Vec<u8>)>,
        primed: bool,
    },
}

impl Source {
    fn peek(&mut self) -> Result<Option<&(Vec<u8>, EntryKind, Vec<u8>)>> {
        match self {
            Source::Mem { items, pos } => Ok(items.get(*pos)),
            Source::Tph {
                iter,
                peeked,
                primed,
            } => {
                if !*primed {
                    *peeked = iter.next_any()?;
                    *primed = true;
                }
                Ok(peeked.as_ref())
            }
        }
    }

    fn advance(&mut self) -> Result<()> {
        match self {
            Source::Mem { pos, .. } => {
                *pos += 1;
                Ok(())
            }
            Source::Tph { iter, peeked, .. } => {
                *peeked = iter.next_any()?;
                Ok(())
            }
        }
    }
}

/// Merged range cursor. Sources are ordered newest-first, so on equal
/// keys the lowest source index carries the winning version.
pub struct Iter<'a> {
    engine: &'a Engine,
    sources: Vec<Source>,
    end: Option<Vec<u8>>,
}

impl<'a> Iter<'a> {
    /// Next live pair in comparator order, or `None` when exhausted.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Result<Option<(Vec<u8>, Vec<u8>)>> {
        let cmp = self.engine.cmp.clone();
        loop {
            // Smallest key across sources; ties resolve to the newest.
            let mut winner: Option<(usize, Vec<u8>)> = None;
            for i in 0..self.sources.len() {
                let Some((key, _, _)) = self.sources[i].peek()? else {
                    continue;
                };
                match &winner {
                    None => winner = Some((i, key.clone())),
                    Some((_, best)) => {
                        if cmp.compare(key, best) == std::cmp::Ordering::Less {
                            winner = Some((i, key.clone()));
                        }
                    }
                }
            }
            let Some((idx, key)) = winner else {
                return Ok(None);
            };
            if let Some(end) = &self.end {
                if cmp.compare(&key, end) != std::cmp::Ordering::Less {
                    return Ok(None);
                }
            }
            let (_, kind, value) = self.sources[idx].peek()?.cloned().unwrap();
            // Consume this key from every source.
            for source in self.sources.iter_mut() {
                while let Some((k, _, _)) = source.peek()? {
                    if cmp.compare(k, &key) == std::cmp::Ordering::Equal {
                        source.advance()?;
                    } else {
                        break;
                    }
                }
            }
            match kind {
                EntryKind::Tombstone => continue,
                EntryKind::Put => {
                    self.engine
                        .stats
                        .user_bytes_read
                        .fetch_add((key.len() + value.len()) as u64, Ordering::Relaxed);
                    return Ok(Some((key, value)));
                }
            }
        }
    }
}
