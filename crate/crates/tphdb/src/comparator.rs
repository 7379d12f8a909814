use std::cmp::Ordering;
use std::sync::Arc;

/// User-key ordering for scans and reverse indexes.
///
/// The comparator name is persisted in piece footers and the manifest;
/// opening a database with a different comparator than it was written
/// with is rejected.
pub trait Comparator: Send + Sync {
    fn name(&self) -> &str;
    fn compare(&self, a: &[u8], b: &[u8]) -> Ordering;
}

/// Default bytewise lexicographic ordering.
#[derive(Debug, Default, Clone, Copy)]
pub struct BytewiseComparator;

impl Comparator for BytewiseComparator {
    fn name(&self) -> &str {
        "bytewise"
    }

    fn compare(&self, a: &[u8], b: &[u8]) -> Ordering {
        a.cmp(b)
    }
}

pub type ComparatorRef = Arc<dyn Comparator>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytewise_orders_lexicographically() {
        let c = BytewiseComparator;
        assert_eq!(c.compare(b"a", b"b"), Ordering::Less);
        assert_eq!(c.compare(b"ab", b"a"), Ordering::Greater);
        assert_eq!(c.compare(b"", b""), Ordering::Equal);
    }
}
