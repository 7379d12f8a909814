//! Runtime over one loaded table group: point lookups through the
//! two-tier index, ordered iteration through the reverse index, and
//! lifecycle of the open piece files.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use crate::comparator::Comparator;
use crate::error::{Error, Result};
use crate::hash::key_hash;
use crate::io::IoCounters;
use crate::piece::{
    EntryKind, GlobalIndexSection, PieceReader, Probe, ReverseArrays, ReverseSamples, PIECE_EXT,
};

/// Result of a point lookup against one group.
///
/// `NotFound` only says the key is not in *this* group; `Deleted` is a
/// placeholder hit and shadows older versions everywhere below.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GetOutcome {
    Found(Vec<u8>),
    Deleted,
    NotFound,
}

/// Per-handle configuration snapshot.
#[derive(Debug, Clone, Copy)]
pub struct TphOptions {
    pub seed: u64,
    pub dense_key_fraction: f64,
    pub direct_io: bool,
}

/// Itemized resident index memory.
#[derive(Debug, Default, Clone, Copy)]
pub struct ResidentIndexBytes {
    pub global_params: u64,
    pub signatures: u64,
    pub piece_table: u64,
    pub local_params: u64,
    pub block_offsets: u64,
    pub samples: u64,
}

impl ResidentIndexBytes {
    /// The budgeted figure: index structures proper, excluding the scan
    /// sample array.
    pub fn budget_total(&self) -> u64 {
        self.global_params + self.signatures + self.piece_table + self.local_params
            + self.block_offsets
    }

    pub fn total(&self) -> u64 {
        self.budget_total() + self.samples
    }
}

/// An immutable, loaded view of one table group. Shareable across
/// threads; replaced wholesale when compaction installs a new head.
#[derive(Debug)]
pub struct TphHandle {
    pub tph_id: u64,
    pub level: u32,
    pub index_in_level: u64,
    pub range: (u64, u64),
    pub piece_seqs: Vec<u64>,
    pieces: Vec<PieceReader>,
    global: GlobalIndexSection,
    samples: ReverseSamples,
    sorted: OnceLock<ReverseArrays>,
    opts: TphOptions,
}

impl TphHandle {
    /// Opens every piece of the group and loads the resident sections
    /// from the head (highest-sequence) piece.
    pub fn load(
        dir: &Path,
        tph_id: u64,
        level: u32,
        index_in_level: u64,
        range: (u64, u64),
        piece_seqs: &[u64],
        opts: TphOptions,
        counters: Arc<IoCounters>,
    ) -> Result<Self> {
        assert!(!piece_seqs.is_empty(), "a group has at least a head piece");
        let mut pieces = Vec::with_capacity(piece_seqs.len());
        for &seq in piece_seqs {
            let path = piece_path(dir, seq);
            pieces.push(PieceReader::open(
                &path,
                opts.direct_io,
                opts.dense_key_fraction,
                counters.clone(),
            )?);
        }
        let head = pieces.last().unwrap();
        if !head.footer.is_head {
            return Err(Error::CorruptManifest(format!(
                "piece {} of group {tph_id} is not a head piece",
                head.footer.piece_seq
            )));
        }
        let global = head.read_global(opts.dense_key_fraction)?;
        let samples = head.read_reverse_samples()?;
        Ok(Self {
            tph_id,
            level,
            index_in_level,
            range,
            piece_seqs: piece_seqs.to_vec(),
            pieces,
            global,
            samples,
            sorted: OnceLock::new(),
            opts,
        })
    }

    pub fn pieces(&self) -> &[PieceReader] {
        &self.pieces
    }

    pub fn global(&self) -> &GlobalIndexSection {
        &self.global
    }

    pub fn head(&self) -> &PieceReader {
        self.pieces.last().unwrap()
    }

    /// Keys in the index, placeholders included.
    pub fn indexed_keys(&self) -> u64 {
        self.samples.key_total
    }

    /// Live (non-placeholder) keys.
    pub fn live_keys(&self) -> u64 {
        self.global
            .live_refs(self.pieces.len())
            .iter()
            .sum::<u64>()
    }

    pub fn seed(&self) -> u64 {
        self.opts.seed
    }

    /// Physical record references per piece position, counted from the
    /// reverse index (placeholder records included).
    pub fn record_piece_histogram(&self) -> Result<Vec<u64>> {
        let arrays = self.arrays()?;
        let mut counts = vec![0u64; self.pieces.len()];
        for &p in &arrays.pieces {
            if (p as usize) < counts.len() {
                counts[p as usize] += 1;
            }
        }
        Ok(counts)
    }

    pub fn get(&self, key: &[u8]) -> Result<GetOutcome> {
        self.get_hashed(key, key_hash(key, self.opts.seed))
    }

    /// Two-tier lookup: one in-memory probe, then at most one block read.
    pub fn get_hashed(&self, key: &[u8], key_hash: u64) -> Result<GetOutcome> {
        match self.global.probe(key_hash) {
            Probe::Absent => Ok(GetOutcome::NotFound),
            Probe::Deleted => Ok(GetOutcome::Deleted),
            Probe::InPiece(pos) => {
                let piece = self.pieces.get(pos as usize).ok_or(Error::CorruptIndex {
                    position: pos,
                    pieces: self.pieces.len(),
                })?;
                match piece.lookup(key, key_hash)? {
                    Some((EntryKind::Put, value)) => Ok(GetOutcome::Found(value)),
                    Some((EntryKind::Tombstone, _)) => Ok(GetOutcome::Deleted),
                    // Signature false positive: the slot's owner is a
                    // different key.
                    None => Ok(GetOutcome::NotFound),
                }
            }
        }
    }

    fn arrays(&self) -> Result<&ReverseArrays> {
        if let Some(a) = self.sorted.get() {
            return Ok(a);
        }
        let loaded = self.head().read_reverse_arrays(self.samples.key_total)?;
        let _ = self.sorted.set(loaded);
        Ok(self.sorted.get().unwrap())
    }

    /// Resolves the record at a reverse-index rank.
    fn resolve(&self, rank: u64) -> Result<(Vec<u8>, EntryKind, Vec<u8>)> {
        let arrays = self.arrays()?;
        let pos = arrays.pieces[rank as usize];
        let piece = self.pieces.get(pos as usize).ok_or(Error::CorruptIndex {
            position: pos,
            pieces: self.pieces.len(),
        })?;
        piece
            .record_at(arrays.hashes[rank as usize])?
            .ok_or(Error::CorruptIndex {
                position: pos,
                pieces: self.pieces.len(),
            })
    }

    /// Rank of the first key `>= start`: binary-search the resident
    /// samples, then advance linearly resolving records. Returns the
    /// rank plus the already-resolved record sitting there, if any.
    fn seek_rank(
        &self,
        start: &[u8],
        cmp: &dyn Comparator,
    ) -> Result<(u64, Option<(Vec<u8>, EntryKind, Vec<u8>)>)> {
        if !self.head().footer.has_reverse_index {
            return Err(Error::NoReverseIndex);
        }
        let total = self.samples.key_total;
        // Greatest sample <= start.
        let mut rank = 0u64;
        let s = &self.samples.samples;
        let idx = s.partition_point(|(_, key)| cmp.compare(key, start) != std::cmp::Ordering::Greater);
        if idx > 0 {
            rank = s[idx - 1].0;
        }
        while rank < total {
            let rec = self.resolve(rank)?;
            if cmp.compare(&rec.0, start) != std::cmp::Ordering::Less {
                return Ok((rank, Some(rec)));
            }
            rank += 1;
        }
        Ok((rank, None))
    }

    pub fn resident_breakdown(&self) -> ResidentIndexBytes {
        let (gp, sig, pt) = self.global.resident_bytes();
        let mut out = ResidentIndexBytes {
            global_params: gp,
            signatures: sig,
            piece_table: pt,
            ..Default::default()
        };
        for p in &self.pieces {
            let (params, offsets) = p.resident_bytes();
            out.local_params += params;
            out.block_offsets += offsets;
        }
        out.samples = self
            .samples
            .samples
            .iter()
            .map(|(_, k)| 8 + k.len() as u64)
            .sum();
        out
    }
}

/// Ordered cursor over one group's reverse index. Owns its handle, so it
/// pins the version it was opened under even while compaction replaces
/// the group.
pub struct TphIter {
    handle: Arc<TphHandle>,
    rank: u64,
    pending: Option<(Vec<u8>, EntryKind, Vec<u8>)>,
}

impl TphIter {
    /// Cursor positioned at the first key `>= start`.
    pub fn seek(handle: Arc<TphHandle>, start: &[u8], cmp: &dyn Comparator) -> Result<Self> {
        let (rank, pending) = handle.seek_rank(start, cmp)?;
        Ok(Self {
            handle,
            rank,
            pending,
        })
    }

    /// Cursor over the whole group from rank zero.
    pub fn all(handle: Arc<TphHandle>) -> Result<Self> {
        if !handle.head().footer.has_reverse_index {
            return Err(Error::NoReverseIndex);
        }
        Ok(Self {
            handle,
            rank: 0,
            pending: None,
        })
    }

    /// Next record including placeholder markers (engine merge input).
    pub(crate) fn next_any(&mut self) -> Result<Option<(Vec<u8>, EntryKind, Vec<u8>)>> {
        if let Some(rec) = self.pending.take() {
            self.rank += 1;
            return Ok(Some(rec));
        }
        if self.rank >= self.handle.samples.key_total {
            return Ok(None);
        }
        let rec = self.handle.resolve(self.rank)?;
        self.rank += 1;
        Ok(Some(rec))
    }

    /// Next live pair, skipping placeholders. Exhaustion is idempotent.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Result<Option<(Vec<u8>, Vec<u8>)>> {
        loop {
            match self.next_any()? {
                None => return Ok(None),
                Some((key, EntryKind::Put, value)) => return Ok(Some((key, value))),
                Some((_, EntryKind::Tombstone, _)) => continue,
            }
        }
    }
}

pub fn piece_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("{seq:010}.{PIECE_EXT}"))
}
