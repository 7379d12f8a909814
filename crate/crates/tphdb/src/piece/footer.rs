//! The fixed 256-byte footer at the end of every piece file and the
//! segment directory it points at.
//!
//! Footer layout (little-endian):
//!
//! ```text
//! 0    format_version u32        68   block_k u32
//! 4    flags u32                 72   page_size u32
//! 8    tph_id u64                76   comparator name [u8; 20]
//! 16   piece_seq u64             96   seg_dir_offset u64
//! 24   range_lo u64              104  seg_dir_len u64
//! 32   range_hi u64              112  global_offset u64
//! 40   key_count u64             120  global_len u64
//! 48   tombstone_count u64       128  reverse_offset u64
//! 56   raw_kv_bytes u64          136  reverse_samples_len u64
//! 64   segment_count u32         144  reverse_len u64
//! 152..248 reserved zeros
//! 248  crc32c of bytes [0, 248)
//! 252  magic "TPHF"
//! ```

use super::{FOOTER_LEN, FOOTER_MAGIC, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const FLAG_IS_HEAD: u32 = 1;
pub const FLAG_HAS_REVERSE_INDEX: u32 = 2;

/// Piece-level metadata; head pieces also locate the group-wide index
/// sections through it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PieceFooter {
    pub format_version: u32,
    pub is_head: bool,
    pub has_reverse_index: bool,
    pub tph_id: u64,
    pub piece_seq: u64,
    pub range_lo: u64,
    pub range_hi: u64,
    pub key_count: u64,
    pub tombstone_count: u64,
    pub raw_kv_bytes: u64,
    pub segment_count: u32,
    pub block_k: u32,
    pub page_size: u32,
    pub comparator: String,
    pub seg_dir_offset: u64,
    pub seg_dir_len: u64,
    pub global_offset: u64,
    pub global_len: u64,
    pub reverse_offset: u64,
    pub reverse_samples_len: u64,
    pub reverse_len: u64,
}

impl PieceFooter {
    pub fn encode(&self) -> Result<[u8; FOOTER_LEN as usize]> {
        let mut out = [0u8; FOOTER_LEN as usize];
        let mut flags = 0u32;
        if self.is_head {
            flags |= FLAG_IS_HEAD;
        }
        if self.has_reverse_index {
            flags |= FLAG_HAS_REVERSE_INDEX;
        }
        out[0..4].copy_from_slice(&self.format_version.to_le_bytes());
        out[4..8].copy_from_slice(&flags.to_le_bytes());
        out[8..16].copy_from_slice(&self.tph_id.to_le_bytes());
        out[16..24].copy_from_slice(&self.piece_seq.to_le_bytes());
        out[24..32].copy_from_slice(&self.range_lo.to_le_bytes());
        out[32..40].copy_from_slice(&self.range_hi.to_le_bytes());
        out[40..48].copy_from_slice(&self.key_count.to_le_bytes());
        out[48..56].copy_from_slice(&self.tombstone_count.to_le_bytes());
        out[56..64].copy_from_slice(&self.raw_kv_bytes.to_le_bytes());
        out[64..68].copy_from_slice(&self.segment_count.to_le_bytes());
        out[68..72].copy_from_slice(&self.block_k.to_le_bytes());
        out[72..76].copy_from_slice(&self.page_size.to_le_bytes());
        let name = self.comparator.as_bytes();
        if name.len() > 20 {
            return Err(Error::InvalidConfig(format!(
                "comparator name `{}` exceeds 20 bytes",
                self.comparator
            )));
        }
        out[76..76 + name.len()].copy_from_slice(name);
        out[96..104].copy_from_slice(&self.seg_dir_offset.to_le_bytes());
        out[104..112].copy_from_slice(&self.seg_dir_len.to_le_bytes());
        out[112..120].copy_from_slice(&self.global_offset.to_le_bytes());
        out[120..128].copy_from_slice(&self.global_len.to_le_bytes());
        out[128..136].copy_from_slice(&self.reverse_offset.to_le_bytes());
        out[136..144].copy_from_slice(&self.reverse_samples_len.to_le_bytes());
        out[144..152].copy_from_slice(&self.reverse_len.to_le_bytes());
        let crc = crc32c::crc32c(&out[..248]);
        out[248..252].copy_from_slice(&crc.to_le_bytes());
        out[252..256].copy_from_slice(FOOTER_MAGIC);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != FOOTER_LEN as usize {
            return Err(Error::TruncatedFile { context: "footer" });
        }
        if &bytes[252..256] != FOOTER_MAGIC {
            return Err(Error::BadMagic { context: "footer" });
        }
        let stored = u32::from_le_bytes(bytes[248..252].try_into().unwrap());
        if crc32c::crc32c(&bytes[..248]) != stored {
            return Err(Error::ChecksumMismatch { context: "footer" });
        }
        let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
        let u64_at = |p: usize| u64::from_le_bytes(bytes[p..p + 8].try_into().unwrap());
        let format_version = u32_at(0);
        if format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                context: "piece footer",
                found: format_version,
                supported: FORMAT_VERSION,
            });
        }
        let flags = u32_at(4);
        let name_raw = &bytes[76..96];
        let name_len = name_raw.iter().position(|&b| b == 0).unwrap_or(20);
        let comparator = String::from_utf8_lossy(&name_raw[..name_len]).into_owned();
        Ok(Self {
            format_version,
            is_head: flags & FLAG_IS_HEAD != 0,
            has_reverse_index: flags & FLAG_HAS_REVERSE_INDEX != 0,
            tph_id: u64_at(8),
            piece_seq: u64_at(16),
            range_lo: u64_at(24),
            range_hi: u64_at(32),
            key_count: u64_at(40),
            tombstone_count: u64_at(48),
            raw_kv_bytes: u64_at(56),
            segment_count: u32_at(64),
            block_k: u32_at(68),
            page_size: u32_at(72),
            comparator,
            seg_dir_offset: u64_at(96),
            seg_dir_len: u64_at(104),
            global_offset: u64_at(112),
            global_len: u64_at(120),
            reverse_offset: u64_at(128),
            reverse_samples_len: u64_at(136),
            reverse_len: u64_at(144),
        })
    }

    /// Records physically present in this piece (live or stale).
    pub fn record_count(&self) -> u64 {
        self.key_count + self.tombstone_count
    }
}

/// One entry of the segment directory: where a segment's three parts live
/// inside the file. Fixed 48 bytes per entry, CRC32C over the whole
/// directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentMeta {
    pub offset: u64,
    pub blocks_len: u64,
    pub table_len: u64,
    pub fn_len: u64,
    pub block_count: u32,
    pub key_count: u64,
}

const SEG_META_LEN: usize = 48;

pub(super) fn encode_segment_dir(entries: &[SegmentMeta]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.len() * SEG_META_LEN + 4);
    for m in entries {
        out.extend_from_slice(&m.offset.to_le_bytes());
        out.extend_from_slice(&m.blocks_len.to_le_bytes());
        out.extend_from_slice(&m.table_len.to_le_bytes());
        out.extend_from_slice(&m.fn_len.to_le_bytes());
        out.extend_from_slice(&m.block_count.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&m.key_count.to_le_bytes());
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(super) fn decode_segment_dir(bytes: &[u8], count: u32) -> Result<Vec<SegmentMeta>> {
    let body_len = count as usize * SEG_META_LEN;
    if bytes.len() != body_len + 4 {
        return Err(Error::TruncatedFile {
            context: "segment directory",
        });
    }
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    if crc32c::crc32c(&bytes[..body_len]) != stored {
        return Err(Error::ChecksumMismatch {
            context: "segment directory",
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let b = &bytes[i * SEG_META_LEN..(i + 1) * SEG_META_LEN];
        let u64_at = |p: usize| u64::from_le_bytes(b[p..p + 8].try_into().unwrap());
        out.push(SegmentMeta {
            offset: u64_at(0),
            blocks_len: u64_at(8),
            table_len: u64_at(16),
            fn_len: u64_at(24),
            block_count: u32::from_le_bytes(b[32..36].try_into().unwrap()),
            key_count: u64_at(40),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PieceFooter {
        PieceFooter {
            format_version: FORMAT_VERSION,
            is_head: true,
            has_reverse_index: true,
            tph_id: 42,
            piece_seq: 7,
            range_lo: 0,
            range_hi: 1 << 32,
            key_count: 1000,
            tombstone_count: 3,
            raw_kv_bytes: 123_456,
            segment_count: 64,
            block_k: 13,
            page_size: 4096,
            comparator: "bytewise".to_string(),
            seg_dir_offset: 9000,
            seg_dir_len: 64 * 48 + 4,
            global_offset: 7000,
            global_len: 1500,
            reverse_offset: 8500,
            reverse_samples_len: 120,
            reverse_len: 500,
        }
    }

    #[test]
    fn roundtrip() {
        let f = sample();
        let bytes = f.encode().unwrap();
        assert_eq!(bytes.len(), 256);
        assert_eq!(PieceFooter::decode(&bytes).unwrap(), f);
    }

    #[test]
    fn corruption_and_magic_detected() {
        let f = sample();
        let good = f.encode().unwrap();
        let mut bad = good;
        bad[30] ^= 1;
        assert!(matches!(
            PieceFooter::decode(&bad),
            Err(Error::ChecksumMismatch { .. })
        ));
        let mut nomagic = f.encode().unwrap();
        nomagic[252] = b'X';
        assert!(matches!(
            PieceFooter::decode(&nomagic),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn version_gate() {
        let mut f = sample();
        f.format_version = 99;
        let bytes = f.encode().unwrap();
        assert!(matches!(
            PieceFooter::decode(&bytes),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn segment_dir_roundtrip() {
        let entries = vec![
            SegmentMeta {
                offset: 0,
                blocks_len: 4096,
                table_len: 12,
                fn_len: 48,
                block_count: 2,
                key_count: 20,
            },
            SegmentMeta {
                offset: 4156,
                blocks_len: 0,
                table_len: 8,
                fn_len: 44,
                block_count: 0,
                key_count: 0,
            },
        ];
        let bytes = encode_segment_dir(&entries);
        assert_eq!(decode_segment_dir(&bytes, 2).unwrap(), entries);
        let mut bad = bytes;
        bad[5] ^= 0xff;
        assert!(decode_segment_dir(&bad, 2).is_err());
    }
}
