//! Hashing primitives shared by the index layers.
//!
//! Every key is reduced to one canonical seeded 64-bit hash. All other
//! index inputs derive from it: the perfect-hash pair, the 8-bit
//! membership signature, the 32-bit search key used for range
//! partitioning, and the segment router. The derivations are independent
//! mixes so the layers stay uncorrelated.
//!
//! The functions here are part of the on-disk format: files written under
//! one scheme must be read back with the same one. [`HASH_SCHEME`] is
//! recorded in the manifest so a mismatch fails loudly instead of
//! corrupting lookups.

/// Identifier of the hash scheme, persisted in the manifest.
pub const HASH_SCHEME: &str = "tph-hash-v1";

const P0: u64 = 0xa076_1d64_78bd_642f;
const P1: u64 = 0xe703_7ed1_a0b4_28db;
const P2: u64 = 0x8ebc_6af0_9c88_c6e3;

#[inline]
fn mum(a: u64, b: u64) -> u64 {
    let r = (a as u128).wrapping_mul(b as u128);
    (r as u64) ^ ((r >> 64) as u64)
}

#[inline]
fn read_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b[..8].try_into().unwrap())
}

#[inline]
fn read_partial(b: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..b.len()].copy_from_slice(b);
    u64::from_le_bytes(buf)
}

/// Canonical seeded 64-bit hash of key bytes (folded-multiply stripes).
pub fn key_hash(key: &[u8], seed: u64) -> u64 {
    let mut a = seed ^ P0;
    let mut b = seed.wrapping_add(P1);
    let mut rest = key;
    while rest.len() >= 16 {
        a = mum(read_u64(&rest[..8]) ^ a, P1);
        b = mum(read_u64(&rest[8..16]) ^ b, P2);
        rest = &rest[16..];
    }
    if rest.len() >= 8 {
        a = mum(read_u64(&rest[..8]) ^ a, P1);
        rest = &rest[8..];
    }
    if !rest.is_empty() {
        b = mum(read_partial(rest) ^ b, P2);
    }
    mix64(a ^ b ^ (key.len() as u64).wrapping_mul(P2))
}

/// SplitMix64 finalizer. Bijective, so distinct inputs stay distinct.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Murmur3 finalizer, used where a second independent mix is needed.
#[inline]
fn mix64_alt(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

/// The two hash values feeding the perfect-hash position formula.
///
/// `h0` and `h1` come from two independent mixes of the canonical key
/// hash, seeded separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashPair {
    pub h0: u64,
    pub h1: u64,
}

/// Derives the perfect-hash pair from a canonical key hash and the
/// function seed.
#[inline]
pub fn hash_pair(key_hash: u64, seed: u64) -> HashPair {
    HashPair {
        h0: mix64(key_hash ^ seed),
        h1: mix64_alt(key_hash.wrapping_add(seed.rotate_left(32) | 1)),
    }
}

/// 8-bit membership signature in `[1, 255]`; 0 is reserved for empty
/// slots. Derived from a mix independent of the pair above.
#[inline]
pub fn signature_of(key_hash: u64) -> u8 {
    let h = mix64(key_hash ^ 0x5149_53a4_c6b4_3e1d);
    (h % 255) as u8 + 1
}

/// 32-bit search key: the high half of the canonical hash. Levels below
/// zero partition their tables by even search-key ranges.
#[inline]
pub fn search_key(key_hash: u64) -> u32 {
    (key_hash >> 32) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_hash_is_deterministic_and_seed_sensitive() {
        let a = key_hash(b"hello world", 7);
        assert_eq!(a, key_hash(b"hello world", 7));
        assert_ne!(a, key_hash(b"hello world", 8));
        assert_ne!(a, key_hash(b"hello worle", 7));
    }

    #[test]
    fn key_hash_covers_all_length_classes() {
        let seed = 99;
        let mut seen = std::collections::HashSet::new();
        for len in 0..64 {
            let key: Vec<u8> = (0..len as u8).collect();
            assert!(seen.insert(key_hash(&key, seed)));
        }
    }

    #[test]
    fn pair_components_differ() {
        for k in 0..1000u64 {
            let p = hash_pair(k, 42);
            assert_ne!(p.h0, p.h1);
        }
    }

    #[test]
    fn signature_never_zero_and_roughly_uniform() {
        let mut counts = [0u32; 256];
        let n = 255_000u64;
        for k in 0..n {
            counts[signature_of(mix64(k)) as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let expected = n as f64 / 255.0;
        for &c in &counts[1..] {
            assert!((c as f64) > expected * 0.8 && (c as f64) < expected * 1.2);
        }
    }

    #[test]
    fn search_key_is_high_half() {
        assert_eq!(search_key(0xdead_beef_1234_5678), 0xdead_beef);
    }
}
