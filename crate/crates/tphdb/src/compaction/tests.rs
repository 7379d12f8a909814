use super::*;
use crate::comparator::BytewiseComparator;
use crate::tph::{GetOutcome, TphHandle, TphOptions};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

const SEED: u64 = 404;
const CMP: BytewiseComparator = BytewiseComparator;

fn opts() -> TphOptions {
    TphOptions {
        seed: SEED,
        dense_key_fraction: 0.6,
        direct_io: false,
    }
}

fn merge_cfg<'a>(
    dir: &'a std::path::Path,
    seq: u64,
    bottom: bool,
    counters: &Arc<IoCounters>,
) -> MergeConfig<'a> {
    MergeConfig {
        dir,
        tph_id: 1,
        new_piece_seq: seq,
        range: (0, SEARCH_KEY_SPACE),
        bottom_level: bottom,
        comparator: &CMP,
        seed: SEED,
        cphash: CpHashConfig::default(),
        segment_count: 4,
        page_size: 4096,
        sample_interval: 64,
        avg_kv_hint: 0,
        direct_io: false,
        policy: GcPolicy::default(),
        counters: counters.clone(),
    }
}

fn put(key: &str, value: &str) -> DeltaRecord {
    DeltaRecord {
        key: key.as_bytes().to_vec(),
        kind: EntryKind::Put,
        value: value.as_bytes().to_vec(),
    }
}

fn del(key: &str) -> DeltaRecord {
    DeltaRecord {
        key: key.as_bytes().to_vec(),
        kind: EntryKind::Tombstone,
        value: Vec::new(),
    }
}

fn load(dir: &std::path::Path, seqs: &[u64], counters: &Arc<IoCounters>) -> TphHandle {
    TphHandle::load(
        dir,
        1,
        1,
        0,
        (0, SEARCH_KEY_SPACE),
        seqs,
        opts(),
        counters.clone(),
    )
    .unwrap()
}

fn apply<'a>(
    dir: &std::path::Path,
    seqs: &mut Vec<u64>,
    next_seq: u64,
    delta: Vec<DeltaRecord>,
    base: Option<&TphHandle>,
    bottom: bool,
    counters: &Arc<IoCounters>,
) -> MergeOutcome {
    let cfg = merge_cfg(dir, next_seq, bottom, counters);
    let outcome = merge(&cfg, delta, base).unwrap();
    let mut new_seqs = outcome.surviving_seqs.clone();
    new_seqs.push(outcome.new_seq);
    for seq in &outcome.deleted_seqs {
        std::fs::remove_file(crate::tph::piece_path(dir, *seq)).unwrap();
    }
    *seqs = new_seqs;
    outcome
}

#[test]
fn gc_marks_oldest_when_over_limit() {
    let stats: Vec<PieceGcStats> = (0..17)
        .map(|_| PieceGcStats {
            records: 100,
            referenced: 100,
        })
        .collect();
    let marks = garbage_collect(&stats, &GcPolicy::default());
    assert!(marks.contains(&0), "oldest piece must be marked");
    // 17 - marks + 1 <= 16
    assert!(17 - marks.len() + 1 <= 16);
}

#[test]
fn gc_leaves_healthy_pieces_alone() {
    let stats: Vec<PieceGcStats> = (0..10)
        .map(|_| PieceGcStats {
            records: 100,
            referenced: 100,
        })
        .collect();
    assert!(garbage_collect(&stats, &GcPolicy::default()).is_empty());
}

#[test]
fn gc_marks_mostly_stale_pieces() {
    let mut stats: Vec<PieceGcStats> = (0..5)
        .map(|_| PieceGcStats {
            records: 100,
            referenced: 100,
        })
        .collect();
    stats[2].referenced = 10;
    let marks = garbage_collect(&stats, &GcPolicy::default());
    assert_eq!(marks, vec![2]);
}

#[test]
fn reverse_index_is_definitional() {
    // Keys a, b, c whose comparator order is a < b < c: the slot array
    // lists their slots in that order, whatever the slots are.
    let hashes: Vec<u64> = [b"a".as_slice(), b"b".as_slice(), b"c".as_slice()]
        .iter()
        .map(|k| key_hash(k, SEED))
        .collect();
    let f = cphash::build(&hashes, SEED, &CpHashConfig::default()).unwrap();
    let mut keys: Vec<(Vec<u8>, u64, u16)> = vec![
        (b"c".to_vec(), hashes[2], 0),
        (b"a".to_vec(), hashes[0], 0),
        (b"b".to_vec(), hashes[1], 0),
    ];
    let data = build_reverse_index(&mut keys, &f, &CMP, 64);
    assert_eq!(
        data.slots,
        vec![
            f.evaluate(hashes[0]),
            f.evaluate(hashes[1]),
            f.evaluate(hashes[2])
        ]
    );
    assert_eq!(data.samples.len(), 1);
    assert_eq!(data.samples[0], (0, b"a".to_vec()));
}

#[test]
fn reverse_index_empty() {
    let f = cphash::build(&[], SEED, &CpHashConfig::default()).unwrap();
    let data = build_reverse_index(&mut [], &f, &CMP, 64);
    assert!(data.slots.is_empty() && data.samples.is_empty());
}

#[test]
fn merge_keeps_unchanged_entries_in_place() {
    // The four-case scenario: k2 added, k4 updated, k3 deleted, k1
    // untouched. The new piece holds k2, k4 and k3's placeholder; k1's
    // index entry still points at the original piece.
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let counters = IoCounters::new();
    let mut seqs = Vec::new();

    let base_outcome = apply(
        dir,
        &mut seqs,
        1,
        vec![put("k1", "v1"), put("k3", "v3"), put("k4", "v4")],
        None,
        false,
        &counters,
    );
    assert_eq!(base_outcome.live_keys, 3);
    let base = load(dir, &seqs, &counters);
    let base_mtime = std::fs::metadata(crate::tph::piece_path(dir, 1))
        .unwrap()
        .modified()
        .unwrap();

    let outcome = apply(
        dir,
        &mut seqs,
        2,
        vec![put("k2", "v2"), put("k4", "v4'"), del("k3")],
        Some(&base),
        false,
        &counters,
    );
    drop(base);
    assert_eq!(seqs, vec![1, 2]);
    // k4 updated and k3 deleted over base versions; k2 is new; k1 stays.
    assert_eq!(outcome.case_counts[MergeCase::Both as usize], 2);
    assert_eq!(outcome.case_counts[MergeCase::BaseOnly as usize], 1);
    assert_eq!(outcome.case_counts[MergeCase::DeltaOnly as usize], 1);

    let merged = load(dir, &seqs, &counters);
    assert_eq!(
        merged.get(b"k1").unwrap(),
        GetOutcome::Found(b"v1".to_vec())
    );
    assert_eq!(
        merged.get(b"k2").unwrap(),
        GetOutcome::Found(b"v2".to_vec())
    );
    assert_eq!(merged.get(b"k3").unwrap(), GetOutcome::Deleted);
    assert_eq!(
        merged.get(b"k4").unwrap(),
        GetOutcome::Found(b"v4'".to_vec())
    );
    // k1 still resolves from the original, untouched piece.
    let after = std::fs::metadata(crate::tph::piece_path(dir, 1))
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(base_mtime, after);
    // New piece physically holds exactly k2, k4, and k3's placeholder.
    assert_eq!(merged.pieces()[1].footer.key_count, 2);
    assert_eq!(merged.pieces()[1].footer.tombstone_count, 1);
}

#[test]
fn empty_delta_merge_writes_only_index() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let counters = IoCounters::new();
    let mut seqs = Vec::new();
    apply(
        dir,
        &mut seqs,
        1,
        (0..500).map(|i| put(&format!("key{i:04}"), "x")).collect(),
        None,
        false,
        &counters,
    );
    let base = load(dir, &seqs, &counters);
    let outcome = apply(dir, &mut seqs, 2, Vec::new(), Some(&base), false, &counters);
    assert_eq!(outcome.written.payload_bytes, 0, "no kv bytes rewritten");
    assert_eq!(outcome.live_keys, 500);
    drop(base);
    let merged = load(dir, &seqs, &counters);
    assert_eq!(merged.get(b"key0123").unwrap(), GetOutcome::Found(b"x".to_vec()));
}

#[test]
fn merge_matches_shadow_map_and_writes_only_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let counters = IoCounters::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut shadow = std::collections::HashMap::new();

    let mut base_records = Vec::new();
    for i in 0..20_000u32 {
        let key = format!("key{i:08}");
        let value: String = (0..32).map(|_| char::from(rng.gen_range(b'a'..=b'z'))).collect();
        shadow.insert(key.clone().into_bytes(), value.clone().into_bytes());
        base_records.push(put(&key, &value));
    }
    let mut seqs = Vec::new();
    apply(dir, &mut seqs, 1, base_records, None, false, &counters);
    let base = load(dir, &seqs, &counters);

    let mut delta = Vec::new();
    let mut delta_bytes = 0u64;
    for _ in 0..2000 {
        let i: u32 = rng.gen_range(0..22_000);
        let key = format!("key{i:08}");
        if rng.gen_bool(0.2) {
            shadow.remove(key.as_bytes());
            delta.push(del(&key));
            delta_bytes += key.len() as u64;
        } else {
            let value: String = (0..32).map(|_| char::from(rng.gen_range(b'a'..=b'z'))).collect();
            shadow.insert(key.clone().into_bytes(), value.clone().into_bytes());
            delta_bytes += (key.len() + value.len()) as u64;
            delta.push(put(&key, &value));
        }
    }
    // Dedup delta newest-wins like a caller would.
    let mut dedup: std::collections::HashMap<Vec<u8>, DeltaRecord> = std::collections::HashMap::new();
    for r in delta {
        dedup.insert(r.key.clone(), r);
    }
    let delta: Vec<DeltaRecord> = dedup.into_values().collect();

    let outcome = apply(dir, &mut seqs, 2, delta, Some(&base), false, &counters);
    drop(base);
    assert!(
        outcome.written.payload_bytes <= delta_bytes * 5 / 4 + 4096,
        "payload {} vs delta {}",
        outcome.written.payload_bytes,
        delta_bytes
    );

    let merged = load(dir, &seqs, &counters);
    for (key, value) in &shadow {
        assert_eq!(
            merged.get(key).unwrap(),
            GetOutcome::Found(value.clone()),
            "key {:?}",
            String::from_utf8_lossy(key)
        );
    }
    // Scan equals the sorted shadow map.
    let mut expected: Vec<(Vec<u8>, Vec<u8>)> =
        shadow.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    expected.sort();
    let mut it = crate::tph::TphIter::all(Arc::new(merged)).unwrap();
    let mut got = Vec::new();
    while let Some(pair) = it.next().unwrap() {
        got.push(pair);
    }
    assert_eq!(got, expected);
}

#[test]
fn overwrite_loop_respects_piece_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let counters = IoCounters::new();
    let mut seqs: Vec<u64> = Vec::new();
    let mut peak_disk = 0u64;
    for round in 0..50u64 {
        let delta: Vec<DeltaRecord> = (0..1000)
            .map(|i| put(&format!("key{i:04}"), &format!("value-{round}-{i}")))
            .collect();
        let base = if seqs.is_empty() {
            None
        } else {
            Some(load(dir, &seqs, &counters))
        };
        apply(dir, &mut seqs, round + 1, delta, base.as_ref(), true, &counters);
        assert!(seqs.len() <= 16, "piece bound violated: {}", seqs.len());
        let disk: u64 = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().metadata().unwrap().len())
            .sum();
        peak_disk = peak_disk.max(disk);
    }
    let final_disk: u64 = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().metadata().unwrap().len())
        .sum();
    assert!(
        final_disk <= peak_disk,
        "disk usage must stabilize ({final_disk} vs peak {peak_disk})"
    );
    let handle = load(dir, &seqs, &counters);
    assert_eq!(handle.live_keys(), 1000);
    assert_eq!(
        handle.get(b"key0500").unwrap(),
        GetOutcome::Found(b"value-49-500".to_vec())
    );
}

#[test]
fn tombstones_drop_only_at_bottom_with_dying_copies() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let counters = IoCounters::new();
    let mut seqs = Vec::new();
    apply(dir, &mut seqs, 1, vec![put("doomed", "v"), put("keep", "v")], None, true, &counters);
    let base = load(dir, &seqs, &counters);
    // Not bottom: the placeholder must persist.
    let tmp2 = tempfile::tempdir().unwrap();
    {
        let mut s2 = Vec::new();
        std::fs::copy(
            crate::tph::piece_path(dir, 1),
            crate::tph::piece_path(tmp2.path(), 1),
        )
        .unwrap();
        s2.push(1);
        let b2 = load(tmp2.path(), &s2, &counters);
        apply(tmp2.path(), &mut s2, 2, vec![del("doomed")], Some(&b2), false, &counters);
        drop(b2);
        let merged = load(tmp2.path(), &s2, &counters);
        assert_eq!(merged.get(b"doomed").unwrap(), GetOutcome::Deleted);
    }
    // Bottom level, but the old put's piece survives: placeholder kept.
    let mut seqs_b = seqs.clone();
    apply(dir, &mut seqs_b, 2, vec![del("doomed")], Some(&base), true, &counters);
    drop(base);
    let merged = load(dir, &seqs_b, &counters);
    assert_eq!(merged.get(b"doomed").unwrap(), GetOutcome::Deleted);
    assert_eq!(merged.get(b"keep").unwrap(), GetOutcome::Found(b"v".to_vec()));
    // Force rewrites until the stale copy dies; the placeholder then
    // disappears and the key reads absent.
    let mut seqs_c = seqs_b.clone();
    let mut policy_counters = counters.clone();
    for round in 0..20u64 {
        let base = load(dir, &seqs_c, &policy_counters);
        let cfg = MergeConfig {
            policy: GcPolicy {
                max_pieces: 1,
                invalid_ratio_threshold: 0.5,
            },
            ..merge_cfg(dir, 10 + round, true, &mut policy_counters)
        };
        let outcome = merge(&cfg, Vec::new(), Some(&base)).unwrap();
        drop(base);
        let mut new_seqs = outcome.surviving_seqs.clone();
        new_seqs.push(outcome.new_seq);
        for seq in &outcome.deleted_seqs {
            std::fs::remove_file(crate::tph::piece_path(dir, *seq)).unwrap();
        }
        seqs_c = new_seqs;
        if seqs_c.len() == 1 {
            break;
        }
    }
    let final_handle = load(dir, &seqs_c, &counters);
    assert_eq!(final_handle.get(b"doomed").unwrap(), GetOutcome::NotFound);
    assert_eq!(final_handle.get(b"keep").unwrap(), GetOutcome::Found(b"v".to_vec()));
    assert_eq!(final_handle.indexed_keys(), 1, "placeholder annihilated");
}

#[test]
fn planned_partitions_are_sound() {
    // Randomized key sets: child partitions are disjoint and union to
    // the parent's key set.
    let layout = HashRangeLayout::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for level in 1..4u32 {
        let keys: Vec<u64> = (0..5000).map(|_| rng.gen()).collect();
        for parent in 0..layout.groups_at(level) {
            let (plo, phi) = layout.range_at(level, parent);
            let parent_keys: Vec<u64> = keys
                .iter()
                .copied()
                .filter(|k| {
                    let sk = crate::hash::search_key(*k) as u64;
                    sk >= plo && sk < phi
                })
                .collect();
            let mut total = 0;
            let mut seen = std::collections::HashSet::new();
            for child in layout.children_of(parent) {
                let (clo, chi) = layout.range_at(level + 1, child);
                for &k in &parent_keys {
                    let sk = crate::hash::search_key(k) as u64;
                    if sk >= clo && sk < chi {
                        total += 1;
                        assert!(seen.insert(k), "key in two sibling partitions");
                        assert_eq!(layout.owner_index(level + 1, sk as u32), child);
                    }
                }
            }
            assert_eq!(total, parent_keys.len());
        }
    }
}

#[test]
fn plan_emits_expected_jobs() {
    let summary = |id, pieces, bytes, ratio| TphSummary {
        tph_id: id,
        index_in_level: 0,
        piece_count: pieces,
        live_bytes: bytes,
        max_invalid_ratio: ratio,
    };
    let levels = vec![
        vec![summary(1, 1, 100, 0.0), summary(2, 1, 100, 0.0)],
        vec![summary(3, 17, 1000, 0.0), summary(4, 2, 50_000, 0.0)],
        vec![summary(5, 2, 10, 0.0)],
    ];
    let input = PlanInput {
        levels: &levels,
        level0_trigger: 2,
        level_budgets: &[0, 10_000, 1_000_000],
        policy: GcPolicy::default(),
        bottom_level: 2,
    };
    let jobs = plan(&input);
    assert!(jobs.contains(&PlannedJob::Rewrite { level: 1, tph_id: 3 }));
    assert!(jobs.contains(&PlannedJob::CompactLevel0 {
        source_tph_ids: vec![1, 2]
    }));
    assert!(jobs.contains(&PlannedJob::PushDown { level: 1, tph_id: 4 }));
    // Empty plan is legal.
    let quiet = vec![vec![], vec![summary(9, 1, 10, 0.0)]];
    let input = PlanInput {
        levels: &quiet,
        level0_trigger: 2,
        level_budgets: &[0, 10_000],
        policy: GcPolicy::default(),
        bottom_level: 1,
    };
    assert!(plan(&input).is_empty());
}
