//! An embedded persistent key-value storage engine built on two-tier
//! perfect hash tables (TPH).
//!
//! On-disk tables are groups of immutable "piece" files. The newest piece
//! of each group (the head) carries a perfect-hash global index that maps
//! every live key of the group to the piece holding its current version,
//! so point lookups cost one in-memory index probe plus a single block
//! read. Compactions write only changed data into a fresh piece and leave
//! unchanged entries where they are, which keeps write amplification low.

pub mod compaction;
pub mod cphash;
pub mod engine;
pub mod hash;
pub mod piece;
pub mod tph;

mod comparator;
mod error;
mod io;
mod varint;

pub use comparator::{BytewiseComparator, Comparator};
pub use engine::{Engine, EngineConfig, EngineMode, IoStatsSnapshot, WalSyncPolicy};
pub use error::{Error, Result};
pub use io::IoCounters;
