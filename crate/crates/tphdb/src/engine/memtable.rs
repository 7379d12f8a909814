use std::collections::BTreeMap;
use std::ops::Bound;

use crate::comparator::ComparatorRef;
use crate::piece::EntryKind;

/// Key wrapper carrying the comparator so the ordered map follows the
/// user-defined order.
#[derive(Clone)]
pub(crate) struct CmpKey {
    pub bytes: Vec<u8>,
    cmp: ComparatorRef,
}

impl PartialEq for CmpKey {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}
impl Eq for CmpKey {}
impl PartialOrd for CmpKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for CmpKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cmp.compare(&self.bytes, &other.bytes)
    }
}

/// Ordered in-memory write buffer. Reflects exactly the log records
/// applied to it, in order; the engine freezes it when full and flushes
/// frozen memtables oldest-first.
pub struct MemTable {
    map: BTreeMap<CmpKey, (EntryKind, Vec<u8>)>,
    bytes: u64,
    cmp: ComparatorRef,
    /// Log generations whose records live in this memtable.
    pub wal_gens: Vec<u64>,
}

impl MemTable {
    pub fn new(cmp: ComparatorRef, wal_gen: u64) -> Self {
        Self {
            map: BTreeMap::new(),
            bytes: 0,
            cmp,
            wal_gens: vec![wal_gen],
        }
    }

    pub fn insert(&mut self, key: &[u8], kind: EntryKind, value: Vec<u8>) {
        self.bytes += (key.len() + value.len()) as u64;
        let k = CmpKey {
            bytes: key.to_vec(),
            cmp: self.cmp.clone(),
        };
        if let Some(old) = self.map.insert(k, (kind, value)) {
            self.bytes -= (key.len() + old.1.len()) as u64;
        }
    }

    pub fn get(&self, key: &[u8]) -> Option<(EntryKind, &[u8])> {
        let probe = CmpKey {
            bytes: key.to_vec(),
            cmp: self.cmp.clone(),
        };
        self.map.get(&probe).map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Approximate payload bytes buffered (keys plus values).
    pub fn approximate_bytes(&self) -> u64 {
        self.bytes
    }

    /// Average record size, for sizing blocks on first flush.
    pub fn observed_avg_kv(&self) -> u32 {
        if self.map.is_empty() {
            return 0;
        }
        (self.bytes / self.map.len() as u64).max(1) as u32
    }

    /// Ordered snapshot of records at or after `start`.
    pub fn collect_from(&self, start: &[u8]) -> Vec<(Vec<u8>, EntryKind, Vec<u8>)> {
        let probe = CmpKey {
            bytes: start.to_vec(),
            cmp: self.cmp.clone(),
        };
        self.map
            .range((Bound::Included(probe), Bound::Unbounded))
            .map(|(k, (kind, v))| (k.bytes.clone(), *kind, v.clone()))
            .collect()
    }

    /// Ordered drain of everything, for flushing.
    pub fn records(&self) -> impl Iterator<Item = (&[u8], EntryKind, &[u8])> {
        self.map
            .iter()
            .map(|(k, (kind, v))| (k.bytes.as_slice(), *kind, v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparator::BytewiseComparator;
    use std::sync::Arc;

    fn memtable() -> MemTable {
        MemTable::new(Arc::new(BytewiseComparator), 1)
    }

    #[test]
    fn last_write_wins_and_bytes_track() {
        let mut m = memtable();
        m.insert(b"k", EntryKind::Put, b"aaaa".to_vec());
        m.insert(b"k", EntryKind::Put, b"bb".to_vec());
        assert_eq!(m.get(b"k"), Some((EntryKind::Put, b"bb".as_slice())));
        assert_eq!(m.approximate_bytes(), 3);
        m.insert(b"k", EntryKind::Tombstone, Vec::new());
        assert_eq!(m.get(b"k"), Some((EntryKind::Tombstone, b"".as_slice())));
        assert_eq!(m.records().count(), 1);
    }

    #[test]
    fn ordered_iteration() {
        let mut m = memtable();
        for k in ["c", "a", "b"] {
            m.insert(k.as_bytes(), EntryKind::Put, b"v".to_vec());
        }
        let keys: Vec<Vec<u8>> = m.records().map(|(k, _, _)| k.to_vec()).collect();
        assert_eq!(keys, vec![b"a".to_vec(), b"b".to_vec(), b"c".to_vec()]);
        let from_b = m.collect_from(b"b");
        assert_eq!(from_b.len(), 2);
        assert_eq!(from_b[0].0, b"b");
    }
}
