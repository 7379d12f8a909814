//! Perfect hash construction over sets of 64-bit key hashes.
//!
//! Construction runs in the classic three stages: keys are mapped into
//! buckets (a dense minority of buckets receives the majority of keys),
//! buckets are ordered by non-increasing size, and a searching pass finds
//! an `(alpha, beta)` parameter pair per bucket that places all of its
//! keys into unoccupied slots. Accepted parameters are kept in a shared
//! dictionary and retried verbatim for later buckets, which keeps the
//! dictionary short and the search cheap.
//!
//! The slot array is scaled by `scale_c` (default 1.1, a 90% load
//! factor). If some bucket exhausts its search budget the table is
//! enlarged by `growth_step` and the searching stage restarts.

mod codec;
mod reduce;

pub use codec::{decode, encode};
pub use reduce::{reduce, Reducer};

use crate::error::{Error, Result};
use crate::hash::{hash_pair, HashPair};

/// Parameter pair for one bucket in the position formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BucketParams {
    pub alpha: u16,
    pub beta: u16,
}

/// Construction tuning knobs.
#[derive(Debug, Clone)]
pub struct CpHashConfig {
    /// Slot-array scale factor; load factor is its reciprocal.
    pub scale_c: f64,
    /// Expected keys per bucket.
    pub avg_bucket_size: u32,
    /// Fraction of buckets classified dense.
    pub dense_fraction: f64,
    /// Fraction of keys routed into the dense buckets.
    pub dense_key_fraction: f64,
    /// Fresh parameter pairs tried per bucket before growing the table.
    pub max_attempts_per_bucket: u32,
    /// Table enlargement factor applied when a search pass fails.
    pub growth_step: f64,
    /// Hard stop: build fails once the table exceeds
    /// `hard_ceiling_factor * scale_c * num_keys` slots.
    pub hard_ceiling_factor: f64,
}

impl Default for CpHashConfig {
    fn default() -> Self {
        Self {
            scale_c: 1.1,
            avg_bucket_size: 5,
            dense_fraction: 0.3,
            dense_key_fraction: 0.6,
            max_attempts_per_bucket: 100_000,
            growth_step: 1.05,
            hard_ceiling_factor: 2.0,
        }
    }
}

impl CpHashConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.scale_c >= 1.0) {
            return bad("scale_c must be >= 1.0");
        }
        if self.avg_bucket_size == 0 {
            return bad("avg_bucket_size must be positive");
        }
        if !(self.dense_fraction > 0.0 && self.dense_fraction < 1.0) {
            return bad("dense_fraction must lie in (0, 1)");
        }
        if !(self.dense_key_fraction > 0.0 && self.dense_key_fraction < 1.0) {
            return bad("dense_key_fraction must lie in (0, 1)");
        }
        if self.dense_key_fraction <= self.dense_fraction {
            return bad("dense_key_fraction must exceed dense_fraction");
        }
        if self.max_attempts_per_bucket == 0 {
            return bad("max_attempts_per_bucket must be positive");
        }
        if !(self.growth_step > 1.0) {
            return bad("growth_step must exceed 1.0");
        }
        if !(self.hard_ceiling_factor >= 1.0) {
            return bad("hard_ceiling_factor must be >= 1.0");
        }
        Ok(())
    }

    /// Classification threshold on the high 32 hash bits.
    pub(crate) fn dense_threshold(&self) -> u64 {
        (self.dense_key_fraction * 4_294_967_296.0).round() as u64
    }
}

/// A built perfect hash function: every key hash of the construction set
/// evaluates to a distinct slot in `[0, table_size)`.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct PerfectHashFn {
    num_keys: u64,
    table_size: u64,
    num_buckets: u32,
    dense_buckets: u32,
    seed: u64,
    dense_threshold: u64,
    param_dictionary: Vec<BucketParams>,
    bucket_param_idx: Vec<u32>,
    growth_steps: u32,
    table_reducer: Reducer,
    dense_reducer: Reducer,
    sparse_reducer: Reducer,
}

impl PartialEq for PerfectHashFn {
    fn eq(&self, other: &Self) -> bool {
        self.num_keys == other.num_keys
            && self.table_size == other.table_size
            && self.num_buckets == other.num_buckets
            && self.dense_buckets == other.dense_buckets
            && self.seed == other.seed
            && self.dense_threshold == other.dense_threshold
            && self.param_dictionary == other.param_dictionary
            && self.bucket_param_idx == other.bucket_param_idx
    }
}

/// Maps a hash pair to its bucket.
///
/// Keys whose high hash half falls below the dense threshold go to the
/// `dense_buckets` leading buckets; the rest spread over the tail. Total
/// over all inputs; the result is always in `[0, num_buckets)`.
pub fn bucket_of(
    pair: HashPair,
    num_buckets: u32,
    dense_buckets: u32,
    dense_key_fraction: f64,
) -> u32 {
    debug_assert!(num_buckets >= 1 && dense_buckets < num_buckets);
    let threshold = (dense_key_fraction * 4_294_967_296.0).round() as u64;
    bucket_of_raw(
        pair,
        dense_buckets,
        threshold,
        &Reducer::new(dense_buckets.max(1) as u64),
        &Reducer::new((num_buckets - dense_buckets) as u64),
    )
}

#[inline]
fn bucket_of_raw(
    pair: HashPair,
    dense_buckets: u32,
    dense_threshold: u64,
    dense_reducer: &Reducer,
    sparse_reducer: &Reducer,
) -> u32 {
    let h = pair.h1;
    if dense_buckets > 0 && (h >> 32) < dense_threshold {
        dense_reducer.reduce(h) as u32
    } else {
        dense_buckets + sparse_reducer.reduce(h) as u32
    }
}

/// The position formula: `(h0 + h1 * alpha + beta) mod table_size`, with
/// wrap-around 64-bit arithmetic before the reduction.
pub fn position(pair: HashPair, params: BucketParams, table_size: u64) -> u64 {
    debug_assert!(table_size >= 1);
    position_reduced(pair, params, &Reducer::new(table_size))
}

#[inline]
fn position_reduced(pair: HashPair, params: BucketParams, reducer: &Reducer) -> u64 {
    let mixed = pair
        .h0
        .wrapping_add(pair.h1.wrapping_mul(params.alpha as u64))
        .wrapping_add(params.beta as u64);
    reducer.reduce(mixed)
}

/// Builds a perfect hash over `key_hashes` (pairwise distinct; duplicates
/// are a build error).
pub fn build(key_hashes: &[u64], seed: u64, config: &CpHashConfig) -> Result<PerfectHashFn> {
    config.validate()?;
    let n = key_hashes.len() as u64;
    if n == 0 {
        return Ok(PerfectHashFn::empty(seed, config));
    }

    {
        let mut sorted = key_hashes.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateKeyHash(w[0]));
            }
        }
    }

    let num_buckets = n.div_ceil(config.avg_bucket_size as u64).max(1) as u32;
    let dense_buckets = ((config.dense_fraction * num_buckets as f64).floor() as u32)
        .min(num_buckets.saturating_sub(1));
    let dense_threshold = config.dense_threshold();
    let dense_reducer = Reducer::new(dense_buckets.max(1) as u64);
    let sparse_reducer = Reducer::new((num_buckets - dense_buckets) as u64);

    // Mapping stage: CSR layout of hash pairs grouped by bucket.
    let pairs: Vec<HashPair> = key_hashes.iter().map(|&k| hash_pair(k, seed)).collect();
    let mut counts = vec![0u32; num_buckets as usize + 1];
    let buckets: Vec<u32> = pairs
        .iter()
        .map(|&p| {
            let b = bucket_of_raw(p, dense_buckets, dense_threshold, &dense_reducer, &sparse_reducer);
            counts[b as usize + 1] += 1;
            b
        })
        .collect();
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut grouped = vec![HashPair { h0: 0, h1: 0 }; pairs.len()];
    {
        let mut cursor = counts.clone();
        for (i, &b) in buckets.iter().enumerate() {
            grouped[cursor[b as usize] as usize] = pairs[i];
            cursor[b as usize] += 1;
        }
    }
    let bucket_pairs = |b: u32| &grouped[counts[b as usize] as usize..counts[b as usize + 1] as usize];

    // Ordering stage: non-increasing size, bucket id breaking ties so the
    // build is reproducible.
    let mut order: Vec<u32> = (0..num_buckets).collect();
    order.sort_unstable_by_key(|&b| {
        let size = counts[b as usize + 1] - counts[b as usize];
        (std::cmp::Reverse(size), b)
    });

    // Searching stage, restarted with a larger table on exhaustion.
    let mut table_size = ((config.scale_c * n as f64).ceil() as u64).max(n);
    let ceiling = ((config.hard_ceiling_factor * config.scale_c * n as f64).ceil() as u64).max(table_size);
    let mut growth_steps = 0u32;
    let mut occupancy;
    let mut dict: Vec<BucketParams> = Vec::new();
    let mut param_idx = vec![0u32; num_buckets as usize];

    'restart: loop {
        occupancy = vec![0u64; (table_size as usize).div_ceil(64)];
        dict.clear();
        param_idx.iter_mut().for_each(|v| *v = 0);
        let reducer = Reducer::new(table_size);
        let mut slots: Vec<u64> = Vec::with_capacity(64);

        for &b in &order {
            let keys = bucket_pairs(b);
            if keys.is_empty() {
                break; // order is by size; the rest are empty too
            }
            let mut placed = false;
            for (di, &params) in dict.iter().enumerate() {
                if try_place(keys, params, &reducer, &mut occupancy, &mut slots) {
                    param_idx[b as usize] = di as u32;
                    placed = true;
                    break;
                }
            }
            if placed {
                continue;
            }
            let mut attempts = 0u32;
            // Betas congruent mod table_size repeat the same placement, so
            // the useful beta range is capped by the table size.
            let beta_range = table_size.min(1 << 16) as u32;
            'search: for alpha in 0..=u16::MAX {
                for beta in 0..beta_range {
                    attempts += 1;
                    let params = BucketParams {
                        alpha,
                        beta: beta as u16,
                    };
                    if try_place(keys, params, &reducer, &mut occupancy, &mut slots) {
                        param_idx[b as usize] = dict.len() as u32;
                        dict.push(params);
                        placed = true;
                        break 'search;
                    }
                    if attempts >= config.max_attempts_per_bucket {
                        break 'search;
                    }
                }
            }
            if !placed {
                let grown = ((table_size as f64 * config.growth_step).ceil() as u64).max(table_size + 1);
                if grown > ceiling {
                    return Err(Error::BuildFailure {
                        table_size: grown,
                        ceiling,
                    });
                }
                table_size = grown;
                growth_steps += 1;
                continue 'restart;
            }
        }
        break;
    }

    Ok(PerfectHashFn {
        num_keys: n,
        table_size,
        num_buckets,
        dense_buckets,
        seed,
        dense_threshold,
        param_dictionary: dict,
        bucket_param_idx: param_idx,
        growth_steps,
        table_reducer: Reducer::new(table_size),
        dense_reducer,
        sparse_reducer,
    })
}

/// Attempts to place every key of one bucket with the given parameters.
/// Positions are computed in fixed-width batches; on any conflict
/// (occupied slot or in-bucket duplicate) the tentative bits are rolled
/// back and the whole attempt fails.
#[inline]
fn try_place(
    keys: &[HashPair],
    params: BucketParams,
    reducer: &Reducer,
    occupancy: &mut [u64],
    slots: &mut Vec<u64>,
) -> bool {
    slots.clear();
    let mut batch = [0u64; 8];
    for chunk in keys.chunks(8) {
        for (i, &pair) in chunk.iter().enumerate() {
            batch[i] = position_reduced(pair, params, reducer);
        }
        for &slot in &batch[..chunk.len()] {
            let (word, bit) = (slot as usize / 64, slot % 64);
            if occupancy[word] >> bit & 1 == 1 {
                for &s in slots.iter() {
                    occupancy[s as usize / 64] &= !(1u64 << (s % 64));
                }
                return false;
            }
            occupancy[word] |= 1u64 << bit;
            slots.push(slot);
        }
    }
    true
}

impl PerfectHashFn {
    fn empty(seed: u64, config: &CpHashConfig) -> Self {
        Self {
            num_keys: 0,
            table_size: 0,
            num_buckets: 0,
            dense_buckets: 0,
            seed,
            dense_threshold: config.dense_threshold(),
            param_dictionary: Vec::new(),
            bucket_param_idx: Vec::new(),
            growth_steps: 0,
            table_reducer: Reducer::new(1),
            dense_reducer: Reducer::new(1),
            sparse_reducer: Reducer::new(1),
        }
    }

    /// Slot for a 64-bit key hash. Total: hashes outside the build set
    /// still land in `[0, table_size)`; membership is the signature
    /// layer's job. An empty function returns 0 (callers guard on
    /// `table_size`).
    #[inline]
    pub fn evaluate(&self, key_hash: u64) -> u64 {
        if self.num_buckets == 0 {
            return 0;
        }
        let pair = hash_pair(key_hash, self.seed);
        let bucket = bucket_of_raw(
            pair,
            self.dense_buckets,
            self.dense_threshold,
            &self.dense_reducer,
            &self.sparse_reducer,
        );
        let params = self.param_dictionary[self.bucket_param_idx[bucket as usize] as usize];
        position_reduced(pair, params, &self.table_reducer)
    }

    pub fn num_keys(&self) -> u64 {
        self.num_keys
    }

    pub fn table_size(&self) -> u64 {
        self.table_size
    }

    pub fn num_buckets(&self) -> u32 {
        self.num_buckets
    }

    pub fn dense_buckets(&self) -> u32 {
        self.dense_buckets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dictionary_len(&self) -> usize {
        self.param_dictionary.len()
    }

    /// Table enlargements that fired during construction.
    pub fn growth_steps(&self) -> u32 {
        self.growth_steps
    }

    /// Bytes this function keeps resident in memory (dictionary plus
    /// per-bucket indices).
    pub fn resident_bytes(&self) -> u64 {
        (self.param_dictionary.len() * std::mem::size_of::<BucketParams>()) as u64
            + (self.bucket_param_idx.len() * std::mem::size_of::<u32>()) as u64
    }

    pub(crate) fn parts(
        &self,
    ) -> (
        u64,
        u64,
        u32,
        u32,
        u64,
        &[BucketParams],
        &[u32],
    ) {
        (
            self.num_keys,
            self.table_size,
            self.num_buckets,
            self.dense_buckets,
            self.seed,
            &self.param_dictionary,
            &self.bucket_param_idx,
        )
    }

    pub(crate) fn from_parts(
        num_keys: u64,
        table_size: u64,
        num_buckets: u32,
        dense_buckets: u32,
        seed: u64,
        dense_key_fraction: f64,
        param_dictionary: Vec<BucketParams>,
        bucket_param_idx: Vec<u32>,
    ) -> Self {
        Self {
            num_keys,
            table_size,
            num_buckets,
            dense_buckets,
            seed,
            dense_threshold: (dense_key_fraction * 4_294_967_296.0).round() as u64,
            param_dictionary,
            bucket_param_idx,
            growth_steps: 0,
            table_reducer: Reducer::new(table_size.max(1)),
            dense_reducer: Reducer::new(dense_buckets.max(1) as u64),
            sparse_reducer: Reducer::new(num_buckets.saturating_sub(dense_buckets).max(1) as u64),
        }
    }
}

#[cfg(test)]
mod tests;
