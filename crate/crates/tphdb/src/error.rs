use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("duplicate key hash in perfect-hash build input: {0:#018x}")]
    DuplicateKeyHash(u64),

    #[error("perfect-hash build failed: table grew to {table_size} slots (ceiling {ceiling}) without success")]
    BuildFailure { table_size: u64, ceiling: u64 },

    #[error("checksum mismatch in {context}")]
    ChecksumMismatch { context: &'static str },

    #[error("file truncated while reading {context}")]
    TruncatedFile { context: &'static str },

    #[error("segment would exceed the 4 GiB limit ({bytes} bytes)")]
    SegmentOverflow { bytes: u64 },

    #[error("block overflowed 16-bit entry offsets ({bytes} bytes)")]
    BlockOverflow { bytes: u64 },

    #[error("bad magic in {context}")]
    BadMagic { context: &'static str },

    #[error("unsupported format version {found} in {context} (supported {supported})")]
    VersionMismatch {
        context: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("global index names piece position {position} but the group has {pieces} pieces")]
    CorruptIndex { position: u16, pieces: usize },

    #[error("piece file missing: {0}")]
    MissingPiece(PathBuf),

    #[error("group has no reverse index (not a head piece)")]
    NoReverseIndex,

    #[error("another instance holds the database lock at {0}")]
    LockHeld(PathBuf),

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    #[error("write-ahead log replay error: {0}")]
    WalReplay(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("keys must be non-empty")]
    EmptyKey,

    #[error("engine is stopped")]
    Stopped,

    #[error(
        "resident index memory {resident} bytes exceeds the configured cap of {cap} bytes"
    )]
    IndexMemoryBudget { resident: u64, cap: u64 },
}
