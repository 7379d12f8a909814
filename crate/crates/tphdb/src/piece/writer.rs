//! Piece file writer.
//!
//! Layout order: segments (blocks, block offset table, local hash
//! function), then for head pieces the global index section and reverse
//! index section, then the segment directory and the footer. Files are
//! written once and never modified.

use std::path::Path;
use std::sync::Arc;

use super::footer::encode_segment_dir;
use super::{
    encode_block, EntryKind, PackedPieceTable, PieceFooter, RecordRef, SegmentMeta,
    FORMAT_VERSION, SEGMENT_LIMIT_BYTES,
};
use crate::cphash::{self, CpHashConfig, PerfectHashFn, Reducer};
use crate::error::{Error, Result};
use crate::hash::key_hash;
use crate::io::{FileWriter, IoCounters};

/// Everything fixed about the piece being written.
#[derive(Debug, Clone)]
pub struct PieceWriteConfig {
    pub tph_id: u64,
    pub piece_seq: u64,
    pub range: (u64, u64),
    pub comparator: String,
    pub segment_count: u32,
    pub block_k: u32,
    pub page_size: u32,
    pub seed: u64,
    pub cphash: CpHashConfig,
    pub direct_io: bool,
    /// Attribute written bytes to the compaction counters.
    pub compaction_scope: bool,
}

/// Sorted reverse index payload for a head piece.
///
/// Ranks run in comparator order over every indexed key. `slots` holds
/// each key's global slot, `hashes` its canonical 64-bit hash, and
/// `record_pieces` the piece position physically holding its record
/// (for placeholders this differs from the global index, which points at
/// the reserved invalid value).
#[derive(Debug, Clone, Default)]
pub struct ReverseIndexData {
    pub slots: Vec<u64>,
    pub hashes: Vec<u64>,
    pub record_pieces: Vec<u16>,
    pub interval: u32,
    pub samples: Vec<(u64, Vec<u8>)>,
}

/// Group-wide sections carried by a head piece.
#[derive(Debug, Clone)]
pub struct HeadSections {
    pub global_fn: PerfectHashFn,
    pub signatures: Vec<u8>,
    pub piece_table: PackedPieceTable,
    /// `(slot, key hash)` per deletion placeholder, sorted by slot. A
    /// probe landing on a placeholder slot arbitrates by hash, so a
    /// signature collision cannot shadow a different live key.
    pub placeholders: Vec<(u64, u64)>,
    pub reverse: ReverseIndexData,
}

/// Write outcome: the footer plus byte accounting split into record
/// payload (block regions) and index sections (everything else).
#[derive(Debug)]
pub struct WrittenPiece {
    pub footer: PieceFooter,
    pub file_len: u64,
    pub payload_bytes: u64,
    pub index_bytes: u64,
}

/// Writes one piece file. `records` carry the physical payload (one per
/// key, placed at its per-segment hash slot); `head` adds the group
/// index sections.
pub fn write_piece(
    path: &Path,
    cfg: &PieceWriteConfig,
    records: &[RecordRef<'_>],
    head: Option<&HeadSections>,
    counters: Arc<IoCounters>,
) -> Result<WrittenPiece> {
    debug_assert!(cfg.segment_count >= 1 && cfg.block_k >= 1);
    if let Some(h) = head {
        let ts = h.global_fn.table_size();
        assert_eq!(h.signatures.len() as u64, ts, "signature table length");
        assert_eq!(h.piece_table.len(), ts, "piece table length");
        let n = h.reverse.slots.len();
        assert!(h.reverse.hashes.len() == n && h.reverse.record_pieces.len() == n);
    }

    // Route records to segments.
    let seg_reducer = Reducer::new(cfg.segment_count as u64);
    let hashes: Vec<u64> = records
        .iter()
        .map(|r| key_hash(r.key, cfg.seed))
        .collect();
    let mut seg_of = vec![0u32; records.len()];
    let mut counts = vec![0u32; cfg.segment_count as usize + 1];
    for (i, &h) in hashes.iter().enumerate() {
        let s = seg_reducer.reduce(h) as u32;
        seg_of[i] = s;
        counts[s as usize + 1] += 1;
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut grouped = vec![0u32; records.len()];
    {
        let mut cursor = counts.clone();
        for (i, &s) in seg_of.iter().enumerate() {
            grouped[cursor[s as usize] as usize] = i as u32;
            cursor[s as usize] += 1;
        }
    }

    let mut writer = FileWriter::create(path, cfg.direct_io, counters, cfg.compaction_scope)?;
    let mut seg_metas = Vec::with_capacity(cfg.segment_count as usize);
    let mut payload_bytes = 0u64;
    let mut key_count = 0u64;
    let mut tombstone_count = 0u64;
    let mut raw_kv_bytes = 0u64;

    for seg in 0..cfg.segment_count {
        let idxs = &grouped[counts[seg as usize] as usize..counts[seg as usize + 1] as usize];
        let seg_hashes: Vec<u64> = idxs.iter().map(|&i| hashes[i as usize]).collect();
        let local_fn = cphash::build(&seg_hashes, cfg.seed, &cfg.cphash)?;
        let table_size = local_fn.table_size();
        let mut slot_map: Vec<Option<u32>> = vec![None; table_size as usize];
        for (&rec, &h) in idxs.iter().zip(&seg_hashes) {
            let slot = local_fn.evaluate(h);
            debug_assert!(slot_map[slot as usize].is_none());
            slot_map[slot as usize] = Some(rec);
        }

        let seg_offset = writer.position();
        let block_count = table_size.div_ceil(cfg.block_k as u64);
        let mut block_offsets: Vec<u32> = Vec::with_capacity(block_count as usize);
        let mut entries: Vec<Option<RecordRef>> = Vec::with_capacity(cfg.block_k as usize);
        for b in 0..block_count {
            let lo = b * cfg.block_k as u64;
            let hi = (lo + cfg.block_k as u64).min(table_size);
            entries.clear();
            for slot in lo..hi {
                entries.push(slot_map[slot as usize].map(|i| records[i as usize]));
            }
            let bytes = encode_block(&entries)?;
            let rel = writer.position() - seg_offset;
            if rel + bytes.len() as u64 > SEGMENT_LIMIT_BYTES {
                return Err(Error::SegmentOverflow {
                    bytes: rel + bytes.len() as u64,
                });
            }
            block_offsets.push(rel as u32);
            writer.write_all(&bytes)?;
        }
        let blocks_len = writer.position() - seg_offset;
        payload_bytes += blocks_len;

        // Block offset table with its own checksum.
        let mut table = Vec::with_capacity(4 + block_offsets.len() * 4 + 4);
        table.extend_from_slice(&(block_offsets.len() as u32).to_le_bytes());
        for &o in &block_offsets {
            table.extend_from_slice(&o.to_le_bytes());
        }
        let crc = crc32c::crc32c(&table);
        table.extend_from_slice(&crc.to_le_bytes());
        writer.write_all(&table)?;

        let fn_bytes = cphash::encode(&local_fn);
        writer.write_all(&fn_bytes)?;

        for &i in idxs {
            let r = &records[i as usize];
            match r.kind {
                EntryKind::Put => key_count += 1,
                EntryKind::Tombstone => tombstone_count += 1,
            }
            raw_kv_bytes += (r.key.len() + r.value.len()) as u64;
        }
        seg_metas.push(SegmentMeta {
            offset: seg_offset,
            blocks_len,
            table_len: table.len() as u64,
            fn_len: fn_bytes.len() as u64,
            block_count: block_count as u32,
            key_count: idxs.len() as u64,
        });
    }

    // Head-only sections.
    let (mut global_offset, mut global_len) = (0u64, 0u64);
    let (mut reverse_offset, mut reverse_samples_len, mut reverse_len) = (0u64, 0u64, 0u64);
    if let Some(h) = head {
        global_offset = writer.position();
        let fn_bytes = cphash::encode(&h.global_fn);
        let mut section = Vec::with_capacity(
            4 + fn_bytes.len()
                + h.signatures.len()
                + h.piece_table.encoded().len()
                + 4
                + h.placeholders.len() * 16
                + 4,
        );
        section.extend_from_slice(&(fn_bytes.len() as u32).to_le_bytes());
        section.extend_from_slice(&fn_bytes);
        section.extend_from_slice(&h.signatures);
        section.extend_from_slice(h.piece_table.encoded());
        section.extend_from_slice(&(h.placeholders.len() as u32).to_le_bytes());
        for (slot, hash) in &h.placeholders {
            section.extend_from_slice(&slot.to_le_bytes());
            section.extend_from_slice(&hash.to_le_bytes());
        }
        let crc = crc32c::crc32c(&section);
        section.extend_from_slice(&crc.to_le_bytes());
        writer.write_all(&section)?;
        global_len = section.len() as u64;

        reverse_offset = writer.position();
        let rv = &h.reverse;
        let mut samples = Vec::new();
        samples.extend_from_slice(&(rv.slots.len() as u64).to_le_bytes());
        samples.extend_from_slice(&rv.interval.to_le_bytes());
        samples.extend_from_slice(&(rv.samples.len() as u32).to_le_bytes());
        for (rank, key) in &rv.samples {
            samples.extend_from_slice(&rank.to_le_bytes());
            samples.extend_from_slice(&(key.len() as u32).to_le_bytes());
            samples.extend_from_slice(key);
        }
        let crc = crc32c::crc32c(&samples);
        samples.extend_from_slice(&crc.to_le_bytes());
        writer.write_all(&samples)?;
        reverse_samples_len = samples.len() as u64;

        let mut arrays = Vec::with_capacity(rv.slots.len() * 18 + 4);
        for &s in &rv.slots {
            arrays.extend_from_slice(&s.to_le_bytes());
        }
        for &h in &rv.hashes {
            arrays.extend_from_slice(&h.to_le_bytes());
        }
        for &p in &rv.record_pieces {
            arrays.extend_from_slice(&p.to_le_bytes());
        }
        let crc = crc32c::crc32c(&arrays);
        arrays.extend_from_slice(&crc.to_le_bytes());
        writer.write_all(&arrays)?;
        reverse_len = reverse_samples_len + arrays.len() as u64;
    }

    let seg_dir_offset = writer.position();
    let dir = encode_segment_dir(&seg_metas);
    writer.write_all(&dir)?;

    let footer = PieceFooter {
        format_version: FORMAT_VERSION,
        is_head: head.is_some(),
        has_reverse_index: head.is_some(),
        tph_id: cfg.tph_id,
        piece_seq: cfg.piece_seq,
        range_lo: cfg.range.0,
        range_hi: cfg.range.1,
        key_count,
        tombstone_count,
        raw_kv_bytes,
        segment_count: cfg.segment_count,
        block_k: cfg.block_k,
        page_size: cfg.page_size,
        comparator: cfg.comparator.clone(),
        seg_dir_offset,
        seg_dir_len: dir.len() as u64,
        global_offset,
        global_len,
        reverse_offset,
        reverse_samples_len,
        reverse_len,
    };
    writer.write_all(&footer.encode()?)?;
    let file_len = writer.finish()?;
    Ok(WrittenPiece {
        footer,
        file_len,
        payload_bytes,
        index_bytes: file_len - payload_bytes,
    })
}
