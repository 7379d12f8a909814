//! Piece file reader.
//!
//! Opening a piece loads its resident metadata: footer, segment
//! directory, per-segment block offset tables and local hash functions,
//! and for head pieces the global index section plus the reverse-index
//! samples. The sorted reverse arrays stay on disk until a scan asks for
//! them. Record access is always one contiguous block read.

use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use super::footer::decode_segment_dir;
use super::{
    Block, EntryKind, PackedPieceTable, PieceFooter, SegmentMeta, FOOTER_LEN, INVALID_PIECE,
};
use crate::cphash::{self, PerfectHashFn, Reducer};
use crate::error::{Error, Result};
use crate::hash::signature_of;
use crate::io::{FileReader, IoCounters};

/// One segment's resident metadata.
#[derive(Debug)]
pub struct SegmentHandle {
    pub meta: SegmentMeta,
    pub block_offsets: Vec<u32>,
    pub local_fn: PerfectHashFn,
}

/// Resident global index of a head piece.
#[derive(Debug)]
pub struct GlobalIndexSection {
    pub hash_fn: PerfectHashFn,
    pub signatures: Vec<u8>,
    pub pieces: PackedPieceTable,
    /// `(slot, key hash)` per placeholder, sorted by slot.
    pub placeholders: Vec<(u64, u64)>,
}

/// Outcome of an in-memory global index probe. `Absent` is definitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Absent,
    Deleted,
    InPiece(u16),
}

impl GlobalIndexSection {
    pub fn probe(&self, key_hash: u64) -> Probe {
        if self.hash_fn.table_size() == 0 {
            return Probe::Absent;
        }
        let slot = self.hash_fn.evaluate(key_hash);
        let stored = self.signatures[slot as usize];
        if stored == 0 || stored != signature_of(key_hash) {
            return Probe::Absent;
        }
        let piece = self.pieces.get(slot);
        if piece == INVALID_PIECE {
            // The slot belongs to a deletion placeholder; only the
            // placeholder's own key reads as deleted. The index is keyed
            // by 64-bit hashes (duplicates are a build error), so hash
            // equality is the arbiter here.
            match self.placeholders.binary_search_by_key(&slot, |p| p.0) {
                Ok(i) if self.placeholders[i].1 == key_hash => Probe::Deleted,
                _ => Probe::Absent,
            }
        } else {
            Probe::InPiece(piece)
        }
    }

    /// Slots pointing at each piece position (placeholders excluded).
    pub fn live_refs(&self, piece_count: usize) -> Vec<u64> {
        let mut counts = vec![0u64; piece_count];
        for slot in 0..self.pieces.len() {
            if self.signatures[slot as usize] == 0 {
                continue;
            }
            let p = self.pieces.get(slot) as usize;
            if p != INVALID_PIECE as usize && p < piece_count {
                counts[p] += 1;
            }
        }
        counts
    }

    /// Indexed keys: slots with a non-zero signature (placeholders
    /// included).
    pub fn indexed_keys(&self) -> u64 {
        self.signatures.iter().filter(|&&s| s != 0).count() as u64
    }

    pub fn resident_bytes(&self) -> (u64, u64, u64) {
        (
            self.hash_fn.resident_bytes(),
            self.signatures.len() as u64,
            self.pieces.resident_bytes() + self.placeholders.len() as u64 * 16,
        )
    }
}

/// Resident sample array of the reverse index.
#[derive(Debug, Default)]
pub struct ReverseSamples {
    pub key_total: u64,
    pub interval: u32,
    pub samples: Vec<(u64, Vec<u8>)>,
}

/// Lazily loaded sorted arrays of the reverse index.
#[derive(Debug, Default)]
pub struct ReverseArrays {
    pub slots: Vec<u64>,
    pub hashes: Vec<u64>,
    pub pieces: Vec<u16>,
}

/// An open piece file with resident metadata.
#[derive(Debug)]
pub struct PieceReader {
    file: FileReader,
    path: PathBuf,
    counters: Arc<IoCounters>,
    pub footer: PieceFooter,
    pub segments: Vec<SegmentHandle>,
    seg_reducer: Reducer,
}

impl PieceReader {
    pub fn open(
        path: &Path,
        direct: bool,
        dense_key_fraction: f64,
        counters: Arc<IoCounters>,
    ) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPiece(path.to_path_buf()));
        }
        let file = FileReader::open(path, direct, counters.clone())?;
        if file.len() < FOOTER_LEN {
            return Err(Error::TruncatedFile { context: "piece" });
        }
        let footer_bytes = file.read_at(file.len() - FOOTER_LEN, FOOTER_LEN as usize)?;
        let footer = PieceFooter::decode(&footer_bytes)?;

        let dir_bytes = file.read_at(footer.seg_dir_offset, footer.seg_dir_len as usize)?;
        let metas = decode_segment_dir(&dir_bytes, footer.segment_count)?;

        let mut segments = Vec::with_capacity(metas.len());
        for meta in metas {
            let table_bytes =
                file.read_at(meta.offset + meta.blocks_len, meta.table_len as usize)?;
            let block_offsets = decode_block_table(&table_bytes, meta.block_count)?;
            let fn_bytes = file.read_at(
                meta.offset + meta.blocks_len + meta.table_len,
                meta.fn_len as usize,
            )?;
            let local_fn = cphash::decode(&fn_bytes, dense_key_fraction)?;
            segments.push(SegmentHandle {
                meta,
                block_offsets,
                local_fn,
            });
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
            counters,
            seg_reducer: Reducer::new(footer.segment_count.max(1) as u64),
            footer,
            segments,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// One contiguous read of a block, checksum-verified.
    pub fn read_block(&self, seg: usize, block: u64) -> Result<Block> {
        let handle = &self.segments[seg];
        let start = handle.block_offsets[block as usize] as u64;
        let end = if (block as usize) + 1 < handle.block_offsets.len() {
            handle.block_offsets[block as usize + 1] as u64
        } else {
            handle.meta.blocks_len
        };
        self.counters.block_reads.fetch_add(1, Ordering::Relaxed);
        let bytes = self
            .file
            .read_at(handle.meta.offset + start, (end - start) as usize)?;
        Block::decode(bytes)
    }

    /// Local lookup: route to the segment, evaluate the local hash, read
    /// the one block, and compare key bytes. `None` means the key is not
    /// in this piece (a signature false positive upstream).
    pub fn lookup(&self, key: &[u8], key_hash: u64) -> Result<Option<(EntryKind, Vec<u8>)>> {
        let seg = self.seg_reducer.reduce(key_hash) as usize;
        let handle = &self.segments[seg];
        if handle.local_fn.table_size() == 0 {
            return Ok(None);
        }
        let slot = handle.local_fn.evaluate(key_hash);
        let (block_idx, entry_idx) = super::resolve_slot(slot, self.footer.block_k);
        let block = self.read_block(seg, block_idx)?;
        match block.entry(entry_idx as usize)? {
            Some(r) if r.key == key => Ok(Some((r.kind, r.value.to_vec()))),
            _ => Ok(None),
        }
    }

    /// Fetches one record by its local slot (reverse-index resolution).
    pub fn record_at(&self, key_hash: u64) -> Result<Option<(Vec<u8>, EntryKind, Vec<u8>)>> {
        let seg = self.seg_reducer.reduce(key_hash) as usize;
        let handle = &self.segments[seg];
        if handle.local_fn.table_size() == 0 {
            return Ok(None);
        }
        let slot = handle.local_fn.evaluate(key_hash);
        let (block_idx, entry_idx) = super::resolve_slot(slot, self.footer.block_k);
        let block = self.read_block(seg, block_idx)?;
        Ok(block
            .entry(entry_idx as usize)?
            .map(|r| (r.key.to_vec(), r.kind, r.value.to_vec())))
    }

    /// Streams every record in the piece (compaction scan). Reads whole
    /// block regions sequentially and attributes the traffic to the
    /// compaction counters.
    pub fn for_each_record(
        &self,
        mut visit: impl FnMut(&[u8], EntryKind, &[u8]) -> Result<()>,
    ) -> Result<()> {
        for (seg_idx, handle) in self.segments.iter().enumerate() {
            if handle.meta.blocks_len == 0 {
                continue;
            }
            let region = self
                .file
                .read_at(handle.meta.offset, handle.meta.blocks_len as usize)?;
            self.counters
                .compaction_bytes_read
                .fetch_add(handle.meta.blocks_len, Ordering::Relaxed);
            for b in 0..handle.meta.block_count as usize {
                let start = handle.block_offsets[b] as usize;
                let end = if b + 1 < handle.block_offsets.len() {
                    handle.block_offsets[b + 1] as usize
                } else {
                    region.len()
                };
                let block = Block::decode(region[start..end].to_vec())?;
                for i in 0..block.entry_count() {
                    if let Some(r) = block.entry(i)? {
                        visit(r.key, r.kind, r.value)?;
                    }
                }
            }
            let _ = seg_idx;
        }
        Ok(())
    }

    /// Decodes the resident global index section of a head piece.
    pub fn read_global(&self, dense_key_fraction: f64) -> Result<GlobalIndexSection> {
        debug_assert!(self.footer.is_head);
        let bytes = self
            .file
            .read_at(self.footer.global_offset, self.footer.global_len as usize)?;
        if bytes.len() < 8 {
            return Err(Error::TruncatedFile {
                context: "global index",
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32c::crc32c(body) != stored {
            return Err(Error::ChecksumMismatch {
                context: "global index",
            });
        }
        let fn_len = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
        let hash_fn = cphash::decode(&body[4..4 + fn_len], dense_key_fraction)?;
        let ts = hash_fn.table_size();
        let sig_start = 4 + fn_len;
        let sig_end = sig_start + ts as usize;
        let packed_end = sig_end + PackedPieceTable::encoded_len(ts);
        if body.len() < packed_end + 4 {
            return Err(Error::TruncatedFile {
                context: "global index",
            });
        }
        let ph_count =
            u32::from_le_bytes(body[packed_end..packed_end + 4].try_into().unwrap()) as usize;
        if body.len() != packed_end + 4 + ph_count * 16 {
            return Err(Error::TruncatedFile {
                context: "global index",
            });
        }
        let mut placeholders = Vec::with_capacity(ph_count);
        let mut pos = packed_end + 4;
        for _ in 0..ph_count {
            let slot = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
            let hash = u64::from_le_bytes(body[pos + 8..pos + 16].try_into().unwrap());
            placeholders.push((slot, hash));
            pos += 16;
        }
        Ok(GlobalIndexSection {
            hash_fn,
            signatures: body[sig_start..sig_end].to_vec(),
            pieces: PackedPieceTable::from_encoded(&body[sig_end..packed_end], ts),
            placeholders,
        })
    }

    /// Loads the resident sample array of the reverse index.
    pub fn read_reverse_samples(&self) -> Result<ReverseSamples> {
        if !self.footer.has_reverse_index {
            return Err(Error::NoReverseIndex);
        }
        let bytes = self.file.read_at(
            self.footer.reverse_offset,
            self.footer.reverse_samples_len as usize,
        )?;
        if bytes.len() < 20 {
            return Err(Error::TruncatedFile {
                context: "reverse samples",
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32c::crc32c(body) != stored {
            return Err(Error::ChecksumMismatch {
                context: "reverse samples",
            });
        }
        let key_total = u64::from_le_bytes(body[0..8].try_into().unwrap());
        let interval = u32::from_le_bytes(body[8..12].try_into().unwrap());
        let count = u32::from_le_bytes(body[12..16].try_into().unwrap());
        let mut samples = Vec::with_capacity(count as usize);
        let mut pos = 16usize;
        for _ in 0..count {
            if pos + 12 > body.len() {
                return Err(Error::TruncatedFile {
                    context: "reverse samples",
                });
            }
            let rank = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
            let klen = u32::from_le_bytes(body[pos + 8..pos + 12].try_into().unwrap()) as usize;
            pos += 12;
            if pos + klen > body.len() {
                return Err(Error::TruncatedFile {
                    context: "reverse samples",
                });
            }
            samples.push((rank, body[pos..pos + klen].to_vec()));
            pos += klen;
        }
        Ok(ReverseSamples {
            key_total,
            interval,
            samples,
        })
    }

    /// Loads the sorted arrays of the reverse index (lazy side).
    pub fn read_reverse_arrays(&self, key_total: u64) -> Result<ReverseArrays> {
        if !self.footer.has_reverse_index {
            return Err(Error::NoReverseIndex);
        }
        let offset = self.footer.reverse_offset + self.footer.reverse_samples_len;
        let len = (self.footer.reverse_len - self.footer.reverse_samples_len) as usize;
        let bytes = self.file.read_at(offset, len)?;
        if bytes.len() < 4 {
            return Err(Error::TruncatedFile {
                context: "reverse arrays",
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32c::crc32c(body) != stored {
            return Err(Error::ChecksumMismatch {
                context: "reverse arrays",
            });
        }
        let n = key_total as usize;
        if body.len() != n * 18 {
            return Err(Error::TruncatedFile {
                context: "reverse arrays",
            });
        }
        let mut slots = Vec::with_capacity(n);
        let mut hashes = Vec::with_capacity(n);
        let mut pieces = Vec::with_capacity(n);
        for i in 0..n {
            slots.push(u64::from_le_bytes(body[i * 8..i * 8 + 8].try_into().unwrap()));
        }
        let base = n * 8;
        for i in 0..n {
            hashes.push(u64::from_le_bytes(
                body[base + i * 8..base + i * 8 + 8].try_into().unwrap(),
            ));
        }
        let base = n * 16;
        for i in 0..n {
            pieces.push(u16::from_le_bytes(
                body[base + i * 2..base + i * 2 + 2].try_into().unwrap(),
            ));
        }
        Ok(ReverseArrays {
            slots,
            hashes,
            pieces,
        })
    }

    /// Resident bytes held by this piece: (local hash params, block
    /// offset tables).
    pub fn resident_bytes(&self) -> (u64, u64) {
        let mut params = 0u64;
        let mut offsets = 0u64;
        for s in &self.segments {
            params += s.local_fn.resident_bytes();
            offsets += (s.block_offsets.len() * 4) as u64;
        }
        (params, offsets)
    }
}

fn decode_block_table(bytes: &[u8], expected: u32) -> Result<Vec<u32>> {
    if bytes.len() < 8 {
        return Err(Error::TruncatedFile {
            context: "block offset table",
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32c::crc32c(body) != stored {
        return Err(Error::ChecksumMismatch {
            context: "block offset table",
        });
    }
    let count = u32::from_le_bytes(body[0..4].try_into().unwrap());
    if count != expected || body.len() != 4 + count as usize * 4 {
        return Err(Error::TruncatedFile {
            context: "block offset table",
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        out.push(u32::from_le_bytes(
            body[4 + i * 4..8 + i * 4].try_into().unwrap(),
        ));
    }
    Ok(out)
}
