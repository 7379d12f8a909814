//! Flush and merge machinery.
//!
//! A merge folds delta records into a base group: it scans every base
//! piece sequentially, picks the newest version per key, classifies each
//! output slot through a [`MergeArray`], and writes one new head piece
//! holding only changed data plus the rebuilt group index. Unchanged base
//! entries keep their original piece; the new index simply points at it.
//! Garbage collection marks over-limit or mostly-stale pieces so the next
//! merge rewrites their live records and the files can be deleted.

mod range;

pub use range::{HashRangeLayout, SEARCH_KEY_SPACE};

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::comparator::Comparator;
use crate::cphash::{self, CpHashConfig, PerfectHashFn};
use crate::error::{Error, Result};
use crate::hash::key_hash;
use crate::io::IoCounters;
use crate::piece::{
    compute_block_k, write_piece, EntryKind, HeadSections, PackedPieceTable, PieceWriteConfig,
    RecordRef, ReverseIndexData, WrittenPiece, INVALID_PIECE, MAX_PIECES_PER_GROUP,
};
use crate::tph::TphHandle;

/// Piece-retention policy per group.
#[derive(Debug, Clone, Copy)]
pub struct GcPolicy {
    pub max_pieces: usize,
    /// A piece whose stale fraction exceeds this is rewritten early.
    pub invalid_ratio_threshold: f64,
}

impl Default for GcPolicy {
    fn default() -> Self {
        Self {
            max_pieces: 16,
            invalid_ratio_threshold: 0.5,
        }
    }
}

impl GcPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_pieces < 1 || self.max_pieces > MAX_PIECES_PER_GROUP {
            return Err(Error::InvalidConfig(format!(
                "max_pieces must lie in [1, {MAX_PIECES_PER_GROUP}]"
            )));
        }
        Ok(())
    }
}

/// Reference stats of one piece, counted from the current group index.
#[derive(Debug, Clone, Copy)]
pub struct PieceGcStats {
    pub records: u64,
    pub referenced: u64,
}

/// Chooses piece positions to fold into the next merge: every piece over
/// the invalid-ratio threshold, plus oldest pieces until the post-merge
/// count fits the limit.
pub fn garbage_collect(stats: &[PieceGcStats], policy: &GcPolicy) -> Vec<usize> {
    let count = stats.len();
    let mut marked = vec![false; count];
    for (i, s) in stats.iter().enumerate() {
        if s.records > 0 {
            let invalid = 1.0 - s.referenced as f64 / s.records as f64;
            if invalid > policy.invalid_ratio_threshold {
                marked[i] = true;
            }
        }
    }
    // The merge adds one piece; keep count - marks + 1 <= max_pieces.
    let mut marks = marked.iter().filter(|&&m| m).count();
    for i in 0..count {
        if count - marks + 1 <= policy.max_pieces {
            break;
        }
        if !marked[i] {
            marked[i] = true;
            marks += 1;
        }
    }
    marked
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Four states a merge cell can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeCase {
    Empty = 0,
    DeltaOnly = 1,
    Both = 2,
    BaseOnly = 3,
}

/// One cell per output slot; records whether the delta, the base, or both
/// contributed the key that landed there.
#[derive(Debug)]
pub struct MergeArray {
    cells: Vec<(bool, bool)>,
}

impl MergeArray {
    pub fn new(table_size: u64) -> Self {
        Self {
            cells: vec![(false, false); table_size as usize],
        }
    }

    pub fn place(&mut self, slot: u64, from_delta: bool, from_base: bool) {
        let cell = &mut self.cells[slot as usize];
        cell.0 |= from_delta;
        cell.1 |= from_base;
    }

    pub fn case_of(&self, slot: u64) -> MergeCase {
        match self.cells[slot as usize] {
            (false, false) => MergeCase::Empty,
            (true, false) => MergeCase::DeltaOnly,
            (true, true) => MergeCase::Both,
            (false, true) => MergeCase::BaseOnly,
        }
    }

    pub fn case_counts(&self) -> [u64; 4] {
        let mut counts = [0u64; 4];
        for i in 0..self.cells.len() {
            counts[self.case_of(i as u64) as usize] += 1;
        }
        counts
    }
}

/// Sorts indexed keys by the comparator and lays out the reverse index:
/// each rank records the key's global slot, its hash, and the piece
/// physically holding its record, with every `interval`-th key sampled.
pub fn build_reverse_index(
    keys: &mut [(Vec<u8>, u64, u16)],
    global_fn: &PerfectHashFn,
    cmp: &dyn Comparator,
    interval: u32,
) -> ReverseIndexData {
    keys.sort_unstable_by(|a, b| cmp.compare(&a.0, &b.0));
    let mut data = ReverseIndexData {
        slots: Vec::with_capacity(keys.len()),
        hashes: Vec::with_capacity(keys.len()),
        record_pieces: Vec::with_capacity(keys.len()),
        interval,
        samples: Vec::new(),
    };
    for (rank, (key, hash, piece)) in keys.iter().enumerate() {
        data.slots.push(global_fn.evaluate(*hash));
        data.hashes.push(*hash);
        data.record_pieces.push(*piece);
        if rank as u64 % interval as u64 == 0 {
            data.samples.push((rank as u64, key.clone()));
        }
    }
    data
}

/// A record entering a merge as delta (newest version per key; the caller
/// deduplicates across delta sources).
#[derive(Debug, Clone)]
pub struct DeltaRecord {
    pub key: Vec<u8>,
    pub kind: EntryKind,
    pub value: Vec<u8>,
}

/// Fixed context for one merge.
pub struct MergeConfig<'a> {
    pub dir: &'a Path,
    pub tph_id: u64,
    pub new_piece_seq: u64,
    pub range: (u64, u64),
    pub bottom_level: bool,
    pub comparator: &'a dyn Comparator,
    pub seed: u64,
    pub cphash: CpHashConfig,
    pub segment_count: u32,
    pub page_size: u32,
    pub sample_interval: u32,
    /// Average record size statistic from prior flushes; 0 derives it
    /// from this merge's inputs.
    pub avg_kv_hint: u32,
    pub direct_io: bool,
    pub policy: GcPolicy,
    pub counters: Arc<IoCounters>,
}

/// What a merge produced; the caller owns manifest commit and file
/// deletion.
#[derive(Debug)]
pub struct MergeOutcome {
    pub new_seq: u64,
    pub surviving_seqs: Vec<u64>,
    pub deleted_seqs: Vec<u64>,
    pub written: WrittenPiece,
    pub live_keys: u64,
    pub live_bytes: u64,
    pub indexed_keys: u64,
    pub observed_avg_kv: u32,
    pub case_counts: [u64; 4],
    /// Referenced records per piece position in the outgoing order
    /// (survivors then the new head).
    pub piece_refs: Vec<u64>,
}

const DELTA_POS: u16 = u16::MAX;

struct KeyState {
    newest_pos: u16,
    kind: EntryKind,
    value: Option<Vec<u8>>,
    put_positions: Vec<u16>,
    saw_base: bool,
}

/// Merges `delta` into `base`, writing one new head piece for the group.
pub fn merge(
    cfg: &MergeConfig<'_>,
    delta: Vec<DeltaRecord>,
    base: Option<&TphHandle>,
) -> Result<MergeOutcome> {
    cfg.policy.validate()?;
    let base_pieces = base.map(|b| b.pieces().len()).unwrap_or(0);

    // Garbage collection decision from the current index state.
    let mut marked = vec![false; base_pieces];
    if let Some(b) = base {
        // Physical record references per piece (puts and placeholders).
        let refs = b.record_piece_histogram()?;
        let stats: Vec<PieceGcStats> = b
            .pieces()
            .iter()
            .enumerate()
            .map(|(i, p)| PieceGcStats {
                records: p.footer.record_count(),
                referenced: refs[i],
            })
            .collect();
        for pos in garbage_collect(&stats, &cfg.policy) {
            marked[pos] = true;
        }
    }

    // Scan the base sequentially, newest version per key winning.
    let mut map: HashMap<Vec<u8>, KeyState> = HashMap::new();
    if let Some(b) = base {
        for (pos, piece) in b.pieces().iter().enumerate() {
            let keep_value = marked[pos];
            piece.for_each_record(|key, kind, value| {
                match map.get_mut(key) {
                    None => {
                        map.insert(
                            key.to_vec(),
                            KeyState {
                                newest_pos: pos as u16,
                                kind,
                                value: keep_value.then(|| value.to_vec()),
                                put_positions: match kind {
                                    EntryKind::Put => vec![pos as u16],
                                    EntryKind::Tombstone => Vec::new(),
                                },
                                saw_base: true,
                            },
                        );
                    }
                    Some(state) => {
                        // Later position = newer version.
                        state.newest_pos = pos as u16;
                        state.kind = kind;
                        state.value = keep_value.then(|| value.to_vec());
                        if kind == EntryKind::Put {
                            state.put_positions.push(pos as u16);
                        }
                    }
                }
                Ok(())
            })?;
        }
    }

    // Overlay the delta: always newer than anything in the base.
    for rec in delta {
        match map.get_mut(&rec.key) {
            None => {
                map.insert(
                    rec.key,
                    KeyState {
                        newest_pos: DELTA_POS,
                        kind: rec.kind,
                        value: Some(rec.value),
                        put_positions: Vec::new(),
                        saw_base: false,
                    },
                );
            }
            Some(state) => {
                state.newest_pos = DELTA_POS;
                state.kind = rec.kind;
                state.value = Some(rec.value);
            }
        }
    }

    // Classify winners.
    struct Indexed {
        key: Vec<u8>,
        hash: u64,
        pointer_new_piece: bool,
        old_pointer: u16,
        is_tombstone: bool,
        from_delta: bool,
        from_base: bool,
    }
    let mut indexed: Vec<Indexed> = Vec::with_capacity(map.len());
    let mut to_write: Vec<(Vec<u8>, EntryKind, Vec<u8>)> = Vec::new();
    let mut live_keys = 0u64;
    let mut live_bytes = 0u64;
    for (key, state) in map {
        let from_delta = state.newest_pos == DELTA_POS;
        let from_base = state.saw_base;
        if state.kind == EntryKind::Tombstone {
            // Droppable only at the bottom level and only when every
            // older put copy dies with this merge; otherwise a future
            // scan would resurrect the stale value.
            let all_puts_dying = state
                .put_positions
                .iter()
                .all(|&p| p != DELTA_POS && marked[p as usize]);
            if cfg.bottom_level && all_puts_dying {
                continue;
            }
            let hash = key_hash(&key, cfg.seed);
            let rewritten = from_delta || marked[state.newest_pos as usize];
            if rewritten {
                to_write.push((key.clone(), EntryKind::Tombstone, Vec::new()));
            }
            indexed.push(Indexed {
                key,
                hash,
                pointer_new_piece: rewritten,
                old_pointer: if from_delta { 0 } else { state.newest_pos },
                is_tombstone: true,
                from_delta,
                from_base,
            });
            continue;
        }
        let hash = key_hash(&key, cfg.seed);
        let rewritten = from_delta || marked[state.newest_pos as usize];
        live_keys += 1;
        if rewritten {
            let value = state.value.expect("rewritten record keeps its value");
            live_bytes += (key.len() + value.len()) as u64;
            to_write.push((key.clone(), EntryKind::Put, value));
        } else {
            live_bytes += key.len() as u64;
        }
        indexed.push(Indexed {
            key,
            hash,
            pointer_new_piece: rewritten,
            old_pointer: if from_delta { 0 } else { state.newest_pos },
            is_tombstone: false,
            from_delta,
            from_base,
        });
    }

    // Live bytes for unchanged base entries: approximate the value size
    // from the base piece stats so level budgets stay meaningful.
    if let Some(b) = base {
        let total_raw: u64 = b.pieces().iter().map(|p| p.footer.raw_kv_bytes).sum();
        let total_records: u64 = b.pieces().iter().map(|p| p.footer.record_count()).sum();
        if total_records > 0 {
            let avg = total_raw / total_records;
            let unchanged = indexed
                .iter()
                .filter(|i| !i.is_tombstone && !i.pointer_new_piece)
                .count() as u64;
            live_bytes += unchanged * avg;
        }
    }

    // Piece survival and position remapping.
    let mut referenced_old = vec![false; base_pieces];
    for i in &indexed {
        if !i.pointer_new_piece {
            referenced_old[i.old_pointer as usize] = true;
        }
    }
    let mut remap = vec![u16::MAX; base_pieces];
    let mut surviving_seqs = Vec::new();
    let mut deleted_seqs = Vec::new();
    if let Some(b) = base {
        for (pos, &seq) in b.piece_seqs.iter().enumerate() {
            if referenced_old[pos] && !marked[pos] {
                remap[pos] = surviving_seqs.len() as u16;
                surviving_seqs.push(seq);
            } else {
                deleted_seqs.push(seq);
            }
        }
    }
    let new_pos = surviving_seqs.len() as u16;
    if new_pos as usize >= MAX_PIECES_PER_GROUP {
        return Err(Error::InvalidConfig(format!(
            "group would exceed {MAX_PIECES_PER_GROUP} pieces"
        )));
    }

    // Build the output index over every indexed key.
    let hashes: Vec<u64> = indexed.iter().map(|i| i.hash).collect();
    let global_fn = cphash::build(&hashes, cfg.seed, &cfg.cphash)?;
    let table_size = global_fn.table_size();
    let mut merge_array = MergeArray::new(table_size);
    let mut signatures = vec![0u8; table_size as usize];
    let mut pieces_table = PackedPieceTable::new(table_size);
    for slot in 0..table_size {
        pieces_table.set(slot, INVALID_PIECE);
    }
    let mut reverse_keys: Vec<(Vec<u8>, u64, u16)> = Vec::with_capacity(indexed.len());
    let mut placeholders: Vec<(u64, u64)> = Vec::new();
    for item in &indexed {
        let slot = global_fn.evaluate(item.hash);
        merge_array.place(slot, item.from_delta, item.from_base);
        signatures[slot as usize] = crate::hash::signature_of(item.hash);
        let record_piece = if item.pointer_new_piece {
            new_pos
        } else {
            remap[item.old_pointer as usize]
        };
        debug_assert_ne!(record_piece, u16::MAX);
        if item.is_tombstone {
            placeholders.push((slot, item.hash));
        } else {
            pieces_table.set(slot, record_piece);
        }
        reverse_keys.push((item.key.clone(), item.hash, record_piece));
    }
    placeholders.sort_unstable_by_key(|p| p.0);
    let case_counts = merge_array.case_counts();
    let mut piece_refs = vec![0u64; new_pos as usize + 1];
    for (_, _, piece) in &reverse_keys {
        piece_refs[*piece as usize] += 1;
    }

    let reverse = build_reverse_index(
        &mut reverse_keys,
        &global_fn,
        cfg.comparator,
        cfg.sample_interval,
    );

    // Write the new head piece.
    let observed_avg_kv = {
        let total: u64 = to_write.iter().map(|(k, _, v)| (k.len() + v.len()) as u64).sum();
        let n = to_write.len() as u64;
        if n > 0 {
            (total / n).max(1) as u32
        } else {
            0
        }
    };
    let avg_kv = if cfg.avg_kv_hint > 0 {
        cfg.avg_kv_hint
    } else {
        observed_avg_kv.max(1)
    };
    let records: Vec<RecordRef> = to_write
        .iter()
        .map(|(k, kind, v)| RecordRef {
            key: k,
            kind: *kind,
            value: v,
        })
        .collect();
    let head = HeadSections {
        global_fn,
        signatures,
        piece_table: pieces_table,
        placeholders,
        reverse,
    };
    let write_cfg = PieceWriteConfig {
        tph_id: cfg.tph_id,
        piece_seq: cfg.new_piece_seq,
        range: cfg.range,
        comparator: cfg.comparator.name().to_string(),
        segment_count: cfg.segment_count,
        block_k: compute_block_k(cfg.page_size, avg_kv.max(1)),
        page_size: cfg.page_size,
        seed: cfg.seed,
        cphash: cfg.cphash.clone(),
        direct_io: cfg.direct_io,
        compaction_scope: true,
    };
    let path = crate::tph::piece_path(cfg.dir, cfg.new_piece_seq);
    let written = write_piece(&path, &write_cfg, &records, Some(&head), cfg.counters.clone())?;

    Ok(MergeOutcome {
        new_seq: cfg.new_piece_seq,
        surviving_seqs,
        deleted_seqs,
        written,
        live_keys,
        live_bytes,
        indexed_keys: indexed.len() as u64,
        observed_avg_kv,
        case_counts,
        piece_refs,
    })
}

/// Reads a group's live contents (placeholders included) for pushing it
/// down a level: a sequential scan of every piece, deduplicated to the
/// newest record per key and validated against the group index.
pub fn extract_live(tph: &TphHandle) -> Result<Vec<DeltaRecord>> {
    use crate::piece::Probe;
    let mut map: HashMap<Vec<u8>, (u16, EntryKind, Vec<u8>)> = HashMap::new();
    for (pos, piece) in tph.pieces().iter().enumerate() {
        piece.for_each_record(|key, kind, value| {
            match map.get_mut(key) {
                None => {
                    map.insert(key.to_vec(), (pos as u16, kind, value.to_vec()));
                }
                Some(state) => {
                    *state = (pos as u16, kind, value.to_vec());
                }
            }
            Ok(())
        })?;
    }
    let mut out = Vec::with_capacity(map.len());
    for (key, (_, kind, value)) in map {
        let hash = key_hash(&key, tph.seed());
        match tph.global().probe(hash) {
            Probe::Absent => {} // stale leftovers of a dropped key
            Probe::Deleted => out.push(DeltaRecord {
                key,
                kind: EntryKind::Tombstone,
                value: Vec::new(),
            }),
            Probe::InPiece(_) => {
                debug_assert_eq!(kind, EntryKind::Put);
                out.push(DeltaRecord { key, kind, value });
            }
        }
    }
    Ok(out)
}

/// Summary of one group for planning.
#[derive(Debug, Clone)]
pub struct TphSummary {
    pub tph_id: u64,
    pub index_in_level: u64,
    pub piece_count: usize,
    pub live_bytes: u64,
    pub max_invalid_ratio: f64,
}

/// What planning looks at.
pub struct PlanInput<'a> {
    /// Groups per level; index 0 is level 0 (newest first).
    pub levels: &'a [Vec<TphSummary>],
    pub level0_trigger: usize,
    pub level_budgets: &'a [u64],
    pub policy: GcPolicy,
    pub bottom_level: u32,
}

/// One schedulable unit of compaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannedJob {
    /// Merge every level-0 group into the level-1 children.
    CompactLevel0 { source_tph_ids: Vec<u64> },
    /// Split one group's contents into its children one level down.
    PushDown { level: u32, tph_id: u64 },
    /// Merge a group with an empty delta so garbage collection can fold
    /// over-limit or mostly-stale pieces.
    Rewrite { level: u32, tph_id: u64 },
}

/// Emits pending jobs, most urgent first. Jobs touching disjoint subtrees
/// are independently schedulable.
pub fn plan(input: &PlanInput<'_>) -> Vec<PlannedJob> {
    let mut jobs = Vec::new();
    for (level, groups) in input.levels.iter().enumerate() {
        if level == 0 {
            continue;
        }
        for g in groups {
            if g.piece_count > input.policy.max_pieces
                || g.max_invalid_ratio > input.policy.invalid_ratio_threshold
            {
                jobs.push(PlannedJob::Rewrite {
                    level: level as u32,
                    tph_id: g.tph_id,
                });
            }
        }
    }
    if !input.levels.is_empty() && input.levels[0].len() >= input.level0_trigger.max(1) {
        jobs.push(PlannedJob::CompactLevel0 {
            source_tph_ids: input.levels[0].iter().map(|g| g.tph_id).collect(),
        });
    }
    for (level, groups) in input.levels.iter().enumerate().skip(1) {
        if level as u32 >= input.bottom_level {
            break;
        }
        let budget = input
            .level_budgets
            .get(level)
            .copied()
            .unwrap_or(u64::MAX);
        let total: u64 = groups.iter().map(|g| g.live_bytes).sum();
        if total > budget {
            if let Some(largest) = groups.iter().max_by_key(|g| g.live_bytes) {
                jobs.push(PlannedJob::PushDown {
                    level: level as u32,
                    tph_id: largest.tph_id,
                });
            }
        }
    }
    jobs
}

#[cfg(test)]
mod tests;
