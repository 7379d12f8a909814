//! Immutable piece files.
//!
//! A piece holds key-value records addressed by per-segment perfect
//! hashes. Records live in blocks sized near the filesystem page; a block
//! is the minimal read unit. The newest piece of a group (the head) also
//! carries the group-wide global index and a sorted reverse index for
//! scans. Every section is independently checksummed and a fixed 256-byte
//! footer sits at the end of the file.

mod block;
mod footer;
mod reader;
mod writer;

pub use block::{encode_block, Block};
pub use footer::{PieceFooter, SegmentMeta};
pub use reader::{GlobalIndexSection, PieceReader, Probe, ReverseArrays, ReverseSamples};
pub use writer::{write_piece, HeadSections, PieceWriteConfig, ReverseIndexData, WrittenPiece};

pub use crate::hash::signature_of;

/// File extension for piece files.
pub const PIECE_EXT: &str = "ph";
/// Fixed footer length at EOF.
pub const FOOTER_LEN: u64 = 256;
pub const FOOTER_MAGIC: &[u8; 4] = b"TPHF";
pub const FORMAT_VERSION: u32 = 1;
/// Segments must stay addressable by 32-bit offsets.
pub const SEGMENT_LIMIT_BYTES: u64 = 4 << 30;
/// Piece pointers are packed 10-bit values; all-ones marks a deleted or
/// unoccupied slot.
pub const INVALID_PIECE: u16 = 0x3ff;
/// Usable piece positions per group (one value is reserved).
pub const MAX_PIECES_PER_GROUP: usize = 1023;

/// Record kind byte inside blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Put = 0,
    Tombstone = 1,
}

impl EntryKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EntryKind::Put),
            1 => Some(EntryKind::Tombstone),
            _ => None,
        }
    }
}

/// Borrowed record handed to the writer.
#[derive(Debug, Clone, Copy)]
pub struct RecordRef<'a> {
    pub key: &'a [u8],
    pub kind: EntryKind,
    pub value: &'a [u8],
}

/// Entries per block: as many average-sized records as fit one page,
/// never less than one.
pub fn compute_block_k(page_size: u32, avg_kv_size: u32) -> u32 {
    debug_assert!(page_size >= 1 && avg_kv_size >= 1);
    (page_size / avg_kv_size).max(1)
}

/// Maps a local hash-table slot to its block and in-block entry index.
pub fn resolve_slot(slot: u64, k: u32) -> (u64, u32) {
    (slot / k as u64, (slot % k as u64) as u32)
}

/// Packed array of 10-bit piece pointers, one per global slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedPieceTable {
    bits: Vec<u8>,
    len: u64,
}

impl PackedPieceTable {
    pub fn new(len: u64) -> Self {
        // Two spare bytes keep the 32-bit window accesses in bounds.
        Self {
            bits: vec![0u8; Self::encoded_len(len) + 2],
            len,
        }
    }

    pub fn encoded_len(len: u64) -> usize {
        (len * 10).div_ceil(8) as usize
    }

    pub fn from_encoded(bytes: &[u8], len: u64) -> Self {
        let mut bits = bytes.to_vec();
        bits.resize(Self::encoded_len(len) + 2, 0);
        Self { bits, len }
    }

    pub fn encoded(&self) -> &[u8] {
        &self.bits[..Self::encoded_len(self.len)]
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn resident_bytes(&self) -> u64 {
        self.bits.len() as u64
    }

    pub fn set(&mut self, index: u64, value: u16) {
        debug_assert!(index < self.len && value <= INVALID_PIECE);
        let bit = index * 10;
        let byte = (bit / 8) as usize;
        let shift = (bit % 8) as u32;
        let mut window = u32::from_le_bytes(self.bits[byte..byte + 4].try_into().unwrap());
        window &= !(0x3ffu32 << shift);
        window |= (value as u32) << shift;
        self.bits[byte..byte + 4].copy_from_slice(&window.to_le_bytes());
    }

    pub fn get(&self, index: u64) -> u16 {
        debug_assert!(index < self.len);
        let bit = index * 10;
        let byte = (bit / 8) as usize;
        let shift = (bit % 8) as u32;
        let window = u32::from_le_bytes(self.bits[byte..byte + 4].try_into().unwrap());
        ((window >> shift) & 0x3ff) as u16
    }
}
