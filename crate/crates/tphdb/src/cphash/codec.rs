//! Serialized perfect-hash layout.
//!
//! Little-endian: magic `CPH1` (4) | seed (8) | num_keys (8) |
//! table_size (8) | num_buckets (4) | dense_buckets (4) | dict_len (4) |
//! dictionary entries (alpha:2, beta:2 each) | varint bucket-to-dictionary
//! indices | CRC32C (4). The dense-key classification threshold is not
//! part of the layout; it is a per-database constant recorded in the
//! manifest and supplied at decode time.

use super::{BucketParams, PerfectHashFn};
use crate::error::{Error, Result};
use crate::varint::{read_varint, write_varint};

const MAGIC: &[u8; 4] = b"CPH1";

/// Encodes a function to its on-disk form.
pub fn encode(f: &PerfectHashFn) -> Vec<u8> {
    let (num_keys, table_size, num_buckets, dense_buckets, seed, dict, idx) = f.parts();
    let mut out = Vec::with_capacity(44 + dict.len() * 4 + idx.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&num_keys.to_le_bytes());
    out.extend_from_slice(&table_size.to_le_bytes());
    out.extend_from_slice(&num_buckets.to_le_bytes());
    out.extend_from_slice(&dense_buckets.to_le_bytes());
    out.extend_from_slice(&(dict.len() as u32).to_le_bytes());
    for p in dict {
        out.extend_from_slice(&p.alpha.to_le_bytes());
        out.extend_from_slice(&p.beta.to_le_bytes());
    }
    for &i in idx {
        write_varint(&mut out, i as u64);
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes a function, verifying magic and checksum.
/// `dense_key_fraction` must match the value the database was built with.
pub fn decode(bytes: &[u8], dense_key_fraction: f64) -> Result<PerfectHashFn> {
    if bytes.len() < 44 {
        return Err(Error::TruncatedFile {
            context: "perfect hash header",
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            context: "perfect hash",
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32c::crc32c(body) != stored {
        return Err(Error::ChecksumMismatch {
            context: "perfect hash",
        });
    }
    let u64_at = |p: usize| u64::from_le_bytes(body[p..p + 8].try_into().unwrap());
    let u32_at = |p: usize| u32::from_le_bytes(body[p..p + 4].try_into().unwrap());
    let seed = u64_at(4);
    let num_keys = u64_at(12);
    let table_size = u64_at(20);
    let num_buckets = u32_at(28);
    let dense_buckets = u32_at(32);
    let dict_len = u32_at(36) as usize;

    let mut pos = 40;
    if body.len() < pos + dict_len * 4 {
        return Err(Error::TruncatedFile {
            context: "perfect hash dictionary",
        });
    }
    let mut dict = Vec::with_capacity(dict_len);
    for _ in 0..dict_len {
        let alpha = u16::from_le_bytes(body[pos..pos + 2].try_into().unwrap());
        let beta = u16::from_le_bytes(body[pos + 2..pos + 4].try_into().unwrap());
        dict.push(BucketParams { alpha, beta });
        pos += 4;
    }
    let mut idx = Vec::with_capacity(num_buckets as usize);
    for _ in 0..num_buckets {
        let v = read_varint(body, &mut pos)?;
        if v as usize >= dict_len.max(1) {
            return Err(Error::ChecksumMismatch {
                context: "perfect hash bucket index",
            });
        }
        idx.push(v as u32);
    }
    if pos != body.len() {
        return Err(Error::ChecksumMismatch {
            context: "perfect hash trailing bytes",
        });
    }
    Ok(PerfectHashFn::from_parts(
        num_keys,
        table_size,
        num_buckets,
        dense_buckets,
        seed,
        dense_key_fraction,
        dict,
        idx,
    ))
}
