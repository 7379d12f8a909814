//! Deterministic workload generation.
//!
//! Same seed, same op streams: every thread derives its own counter-mode
//! RNG stream, values are a pure function of the key index, and inserted
//! key indices are striped per thread. The final logical contents of a
//! run are therefore reproducible without re-running it, which is what
//! `verify` leans on.

use anyhow::{bail, Result};
use rand::prelude::*;
use rand_distr::Distribution as _;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadName {
    Fillrandom,
    Readrandom,
    Readwhilewriting,
    YcsbA,
    YcsbB,
    YcsbC,
    YcsbD,
    YcsbE,
    YcsbF,
}

impl std::str::FromStr for WorkloadName {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fillrandom" => Self::Fillrandom,
            "readrandom" => Self::Readrandom,
            "readwhilewriting" => Self::Readwhilewriting,
            "ycsb_a" => Self::YcsbA,
            "ycsb_b" => Self::YcsbB,
            "ycsb_c" => Self::YcsbC,
            "ycsb_d" => Self::YcsbD,
            "ycsb_e" => Self::YcsbE,
            "ycsb_f" => Self::YcsbF,
            other => bail!("unknown workload `{other}`"),
        })
    }
}

impl std::fmt::Display for WorkloadName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Fillrandom => "fillrandom",
            Self::Readrandom => "readrandom",
            Self::Readwhilewriting => "readwhilewriting",
            Self::YcsbA => "ycsb_a",
            Self::YcsbB => "ycsb_b",
            Self::YcsbC => "ycsb_c",
            Self::YcsbD => "ycsb_d",
            Self::YcsbE => "ycsb_e",
            Self::YcsbF => "ycsb_f",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform,
    Zipfian,
    Latest,
}

impl std::str::FromStr for Distribution {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => Self::Uniform,
            "zipfian" => Self::Zipfian,
            "latest" => Self::Latest,
            other => bail!("unknown distribution `{other}`"),
        })
    }
}

/// Everything that defines a benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: WorkloadName,
    pub num_keys: u64,
    pub key_size: usize,
    pub value_size: usize,
    pub op_count: u64,
    pub threads: usize,
    /// Read probability for `readwhilewriting`; fixed mixes ignore it.
    pub read_fraction: f64,
    pub distribution: Distribution,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(name: WorkloadName, num_keys: u64, seed: u64) -> Self {
        Self {
            name,
            num_keys,
            key_size: 20,
            value_size: 128,
            op_count: num_keys,
            threads: 1,
            read_fraction: 0.9,
            distribution: Distribution::Uniform,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_keys == 0 {
            bail!("num_keys must be positive");
        }
        if self.key_size < 8 || self.key_size > 255 {
            bail!("key_size must lie in [8, 255]");
        }
        if self.value_size == 0 {
            bail!("value_size must be positive");
        }
        if self.threads == 0 {
            bail!("threads must be positive");
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            bail!("read_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

const KEY_PRIME: u64 = 0x9e37_79b9_7f4a_7c15;

/// Fixed-width key bytes for an index.
pub fn key_bytes(spec: &WorkloadSpec, index: u64) -> Vec<u8> {
    let mut out = vec![b'0'; spec.key_size];
    out[..4].copy_from_slice(b"user");
    let digits = format!("{index}");
    let start = spec.key_size - digits.len();
    out[start..].copy_from_slice(digits.as_bytes());
    out
}

/// Value bytes for a key index: a pure function of (seed, index), so any
/// rewrite of the same key writes identical bytes and concurrent runs
/// stay deterministic.
pub fn value_bytes(spec: &WorkloadSpec, index: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index.wrapping_mul(KEY_PRIME));
    let mut out = vec![0u8; spec.value_size];
    rng.fill_bytes(&mut out);
    out
}

/// The key indices the load phase inserts, in insertion order, for one
/// thread. Threads stripe the key space so the union is exactly
/// `[0, num_keys)`.
pub fn load_indices(spec: &WorkloadSpec, thread: usize) -> Vec<u64> {
    let mut indices: Vec<u64> = (thread as u64..spec.num_keys)
        .step_by(spec.threads)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (thread as u64 + 1).wrapping_mul(0xA5A5));
    indices.shuffle(&mut rng);
    indices
}

/// One benchmark operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    /// Overwrite of an existing key.
    Update(u64),
    /// Insert of a brand-new key index.
    Insert(u64),
    Read(u64),
    /// Read-modify-write.
    Rmw(u64),
    /// Range scan: start index and length.
    Scan(u64, usize),
}

/// Per-thread deterministic op stream.
pub struct OpStream {
    spec: WorkloadSpec,
    thread: usize,
    rng: ChaCha8Rng,
    remaining: u64,
    /// Keys this thread has inserted beyond the loaded set.
    inserted: u64,
    zipf: Option<rand_distr::Zipf<f64>>,
}

impl OpStream {
    pub fn new(spec: &WorkloadSpec, thread: usize) -> Self {
        let per_thread = spec.op_count / spec.threads as u64
            + u64::from((thread as u64) < spec.op_count % spec.threads as u64);
        let zipf = match spec.distribution {
            Distribution::Uniform => None,
            Distribution::Zipfian | Distribution::Latest => {
                Some(rand_distr::Zipf::new(spec.num_keys, 0.99).expect("zipf parameters"))
            }
        };
        Self {
            spec: spec.clone(),
            thread,
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ (thread as u64 + 1).wrapping_mul(KEY_PRIME)),
            remaining: per_thread,
            inserted: 0,
            zipf,
        }
    }

    /// Picks an existing key index under the configured distribution.
    fn pick_existing(&mut self) -> u64 {
        match self.spec.distribution {
            Distribution::Uniform => self.rng.gen_range(0..self.spec.num_keys),
            Distribution::Zipfian => {
                let s = self.zipf.unwrap().sample(&mut self.rng) as u64;
                s.saturating_sub(1).min(self.spec.num_keys - 1)
            }
            Distribution::Latest => {
                // Skew toward the most recently loaded keys.
                let s = self.zipf.unwrap().sample(&mut self.rng) as u64;
                self.spec.num_keys - 1 - s.saturating_sub(1).min(self.spec.num_keys - 1)
            }
        }
    }

    /// Next unique key index owned by this thread.
    fn next_insert_index(&mut self) -> u64 {
        let idx = self.spec.num_keys + self.thread as u64 + self.inserted * self.spec.threads as u64;
        self.inserted += 1;
        idx
    }
}

impl Iterator for OpStream {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let roll: f64 = self.rng.gen();
        let op = match self.spec.name {
            WorkloadName::Fillrandom => Op::Update(self.pick_existing()),
            WorkloadName::Readrandom => Op::Read(self.pick_existing()),
            WorkloadName::Readwhilewriting => {
                if roll < self.spec.read_fraction {
                    Op::Read(self.pick_existing())
                } else {
                    Op::Update(self.pick_existing())
                }
            }
            WorkloadName::YcsbA => {
                if roll < 0.5 {
                    Op::Read(self.pick_existing())
                } else {
                    Op::Update(self.pick_existing())
                }
            }
            WorkloadName::YcsbB => {
                if roll < 0.95 {
                    Op::Read(self.pick_existing())
                } else {
                    Op::Update(self.pick_existing())
                }
            }
            WorkloadName::YcsbC => Op::Read(self.pick_existing()),
            WorkloadName::YcsbD => {
                if roll < 0.95 {
                    Op::Read(self.pick_existing())
                } else {
                    Op::Insert(self.next_insert_index())
                }
            }
            WorkloadName::YcsbE => {
                if roll < 0.95 {
                    let len = self.rng.gen_range(1..=100);
                    Op::Scan(self.pick_existing(), len)
                } else {
                    Op::Insert(self.next_insert_index())
                }
            }
            WorkloadName::YcsbF => {
                if roll < 0.5 {
                    Op::Read(self.pick_existing())
                } else {
                    Op::Rmw(self.pick_existing())
                }
            }
        };
        Some(op)
    }
}

/// Every key index the whole run ever writes (load phase plus op-phase
/// inserts), reproducible from the spec alone.
pub fn final_key_indices(spec: &WorkloadSpec) -> Vec<u64> {
    let mut out: Vec<u64> = (0..spec.num_keys).collect();
    for thread in 0..spec.threads {
        for op in OpStream::new(spec, thread) {
            if let Op::Insert(idx) = op {
                out.push(idx);
            }
        }
    }
    out
}
