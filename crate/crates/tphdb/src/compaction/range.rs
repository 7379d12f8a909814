//! Search-key range layout.
//!
//! Below level zero, each level holds `fanout^level` groups evenly
//! partitioning the 32-bit search-key space. Ranges at every level come
//! from one global floor formula, so a parent's children partition it
//! exactly and a group overlaps exactly `fanout` groups one level down.

/// Exclusive upper bound of the search-key space.
pub const SEARCH_KEY_SPACE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy)]
pub struct HashRangeLayout {
    fanout: u32,
}

impl HashRangeLayout {
    pub fn new(fanout: u32) -> Self {
        assert!(fanout >= 1);
        Self { fanout }
    }

    pub fn fanout(&self) -> u32 {
        self.fanout
    }

    /// Groups at a level (levels >= 1; level 0 groups all span the full
    /// space).
    pub fn groups_at(&self, level: u32) -> u64 {
        (self.fanout as u64).saturating_pow(level)
    }

    /// Search-key range `[lo, hi)` of group `index` at `level`.
    pub fn range_at(&self, level: u32, index: u64) -> (u64, u64) {
        if level == 0 {
            return (0, SEARCH_KEY_SPACE);
        }
        let width = self.groups_at(level);
        debug_assert!(index < width);
        let lo = (index as u128 * SEARCH_KEY_SPACE as u128 / width as u128) as u64;
        let hi = ((index + 1) as u128 * SEARCH_KEY_SPACE as u128 / width as u128) as u64;
        (lo, hi)
    }

    /// Index of the group owning `search_key` at `level`: the smallest
    /// `i` whose range end exceeds the key, i.e.
    /// `ceil((key + 1) * width / space) - 1`.
    pub fn owner_index(&self, level: u32, search_key: u32) -> u64 {
        if level == 0 {
            return 0;
        }
        let width = self.groups_at(level) as u128;
        ((search_key as u128 * width + width - 1) / SEARCH_KEY_SPACE as u128) as u64
    }

    /// Child group indices one level down that overlap group `index`.
    pub fn children_of(&self, index: u64) -> std::ops::Range<u64> {
        index * self.fanout as u64..(index + 1) * self.fanout as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fanout_two_even_split() {
        let l = HashRangeLayout::new(2);
        assert_eq!(l.range_at(1, 0), (0, 1 << 31));
        assert_eq!(l.range_at(1, 1), (1 << 31, 1 << 32));
        assert_eq!(l.children_of(0), 0..2);
    }

    #[test]
    fn ranges_partition_each_level() {
        for fanout in [1u32, 2, 3, 4] {
            let l = HashRangeLayout::new(fanout);
            for level in 0..5 {
                let width = l.groups_at(level);
                let mut expected_lo = 0u64;
                for i in 0..width {
                    let (lo, hi) = l.range_at(level, i);
                    assert_eq!(lo, expected_lo);
                    assert!(hi > lo);
                    expected_lo = hi;
                }
                assert_eq!(expected_lo, SEARCH_KEY_SPACE);
            }
        }
    }

    #[test]
    fn children_partition_parent_exactly() {
        for fanout in [2u32, 3, 5] {
            let l = HashRangeLayout::new(fanout);
            for level in 1..4 {
                for i in 0..l.groups_at(level) {
                    let (plo, phi) = l.range_at(level, i);
                    let mut cursor = plo;
                    for c in l.children_of(i) {
                        let (clo, chi) = l.range_at(level + 1, c);
                        assert_eq!(clo, cursor);
                        cursor = chi;
                    }
                    assert_eq!(cursor, phi);
                }
            }
        }
    }

    #[test]
    fn owner_index_inverts_ranges() {
        let l = HashRangeLayout::new(3);
        for level in 1..4 {
            for i in 0..l.groups_at(level) {
                let (lo, hi) = l.range_at(level, i);
                for sk in [lo, lo + (hi - lo) / 2, hi - 1] {
                    assert_eq!(l.owner_index(level, sk as u32), i);
                }
            }
        }
    }
}
