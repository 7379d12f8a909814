//! Engine-level behavior against shadow-map oracles: randomized workloads
//! with flushes, compactions, and crash/reopen cycles must match a plain
//! in-memory map exactly.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use tphdb::{Engine, EngineConfig, EngineMode};

fn small_config(dir: &std::path::Path, mode: EngineMode) -> EngineConfig {
    let mut cfg = EngineConfig::new(dir);
    cfg.mode = mode;
    cfg.memtable_bytes = 16 << 10;
    cfg.max_memtables = 2;
    cfg.levels = 3;
    cfg.segment_count = 4;
    cfg.level0_trigger = 2;
    cfg.level1_budget_bytes = 64 << 10;
    cfg.hash_seed = 0xfeed;
    cfg
}

#[test]
fn put_get_delete_basics() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
    assert_eq!(engine.get(b"missing").unwrap(), None);
    engine.put(b"k", b"v1").unwrap();
    assert_eq!(engine.get(b"k").unwrap(), Some(b"v1".to_vec()));
    engine.put(b"k", b"v2").unwrap();
    assert_eq!(engine.get(b"k").unwrap(), Some(b"v2".to_vec()));
    engine.delete(b"k").unwrap();
    assert_eq!(engine.get(b"k").unwrap(), None);
    engine.delete(b"never-existed").unwrap();
    assert_eq!(engine.get(b"never-existed").unwrap(), None);
    engine.put(b"k", b"v3").unwrap();
    assert_eq!(engine.get(b"k").unwrap(), Some(b"v3".to_vec()));
    assert!(engine.put(b"", b"x").is_err());
}

#[test]
fn empty_store_and_empty_range() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
    let mut it = engine.iterate(b"", None).unwrap();
    assert!(it.next().unwrap().is_none());
    engine.put(b"a", b"1").unwrap();
    let mut it = engine.iterate(b"b", Some(b"b")).unwrap();
    assert!(it.next().unwrap().is_none());
}

#[test]
fn double_open_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
    let second = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange));
    assert!(matches!(second, Err(tphdb::Error::LockHeld(_))));
    drop(engine);
    Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
}

#[test]
fn unflushed_writes_survive_crash() {
    let dir = tempfile::tempdir().unwrap();
    {
        let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
        for i in 0..10_000u32 {
            engine
                .put(format!("key{i:06}").as_bytes(), format!("val{i}").as_bytes())
                .unwrap();
        }
        // Dropped without close(): crash-equivalent.
    }
    let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
    for i in (0..10_000u32).step_by(997) {
        assert_eq!(
            engine.get(format!("key{i:06}").as_bytes()).unwrap(),
            Some(format!("val{i}").into_bytes())
        );
    }
}

#[test]
fn orphan_piece_files_are_swept_on_open() {
    let dir = tempfile::tempdir().unwrap();
    {
        let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
        engine.put(b"a", b"1").unwrap();
        engine.flush().unwrap();
    }
    let orphan_dir = dir.path().join("tph").join("99999999");
    std::fs::create_dir_all(&orphan_dir).unwrap();
    let orphan = orphan_dir.join("0000009999.ph");
    std::fs::write(&orphan, b"not a real piece").unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
    assert!(!orphan.exists(), "orphan piece must be swept");
    assert_eq!(engine.get(b"a").unwrap(), Some(b"1".to_vec()));
}

#[test]
fn memtable_version_beats_stale_table_in_scans() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
    engine.put(b"k1", b"old").unwrap();
    engine.put(b"k2", b"keep").unwrap();
    engine.flush().unwrap();
    engine.put(b"k1", b"new").unwrap();
    let mut it = engine.iterate(b"", None).unwrap();
    let mut got = Vec::new();
    while let Some(pair) = it.next().unwrap() {
        got.push(pair);
    }
    assert_eq!(
        got,
        vec![
            (b"k1".to_vec(), b"new".to_vec()),
            (b"k2".to_vec(), b"keep".to_vec())
        ]
    );
}

#[test]
fn one_level_mode_bypasses_level_zero() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineMode::OneLevel)).unwrap();
    for i in 0..2000u32 {
        engine
            .put(format!("key{i:06}").as_bytes(), &[7u8; 64])
            .unwrap();
    }
    engine.flush().unwrap();
    let counts = engine.piece_counts();
    assert_eq!(counts[0].len(), 0, "no level-0 group in one_level mode");
    assert!(counts[1].iter().all(|&c| c >= 1));
    assert_eq!(
        engine.get(b"key000500").unwrap(),
        Some(vec![7u8; 64]),
        "data must be readable from level 1"
    );
}

fn randomized_oracle_run(mode: EngineMode, seed: u64) {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shadow: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let mut engine = Engine::open(small_config(dir.path(), mode)).unwrap();

    let ops = 10_000usize;
    for op in 0..ops {
        let k: u32 = rng.gen_range(0..1500);
        let key = format!("key{k:06}").into_bytes();
        match rng.gen_range(0..10) {
            0..=5 => {
                let value: Vec<u8> = (0..rng.gen_range(1..80)).map(|_| rng.gen()).collect();
                engine.put(&key, &value).unwrap();
                shadow.insert(key, value);
            }
            6..=7 => {
                engine.delete(&key).unwrap();
                shadow.remove(&key);
            }
            8 => {
                assert_eq!(engine.get(&key).unwrap(), shadow.get(&key).cloned());
            }
            _ => {
                let end_k = k.saturating_add(rng.gen_range(1..50));
                let end = format!("key{end_k:06}").into_bytes();
                let mut it = engine.iterate(&key, Some(&end)).unwrap();
                let mut got = Vec::new();
                while let Some(pair) = it.next().unwrap() {
                    got.push(pair);
                }
                let expected: Vec<(Vec<u8>, Vec<u8>)> = shadow
                    .range(key.clone()..end.clone())
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                assert_eq!(got, expected, "range scan diverged at op {op}");
            }
        }
        if op % 2500 == 2499 {
            engine.flush().unwrap();
        }
        if op % 3333 == 3332 {
            // Crash and reopen.
            drop(engine);
            engine = Engine::open(small_config(dir.path(), mode)).unwrap();
        }
    }
    engine.flush().unwrap();
    engine.maintain().unwrap();

    // Full verification: every key plus a complete ordered scan.
    for (key, value) in &shadow {
        assert_eq!(engine.get(key).unwrap(), Some(value.clone()));
    }
    let mut it = engine.iterate(b"", None).unwrap();
    let mut got = Vec::new();
    while let Some(pair) = it.next().unwrap() {
        got.push(pair);
    }
    let expected: Vec<(Vec<u8>, Vec<u8>)> =
        shadow.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    assert_eq!(got, expected);

    // Absent keys stay absent.
    for k in 2000..2100u32 {
        assert_eq!(engine.get(format!("key{k:06}").as_bytes()).unwrap(), None);
    }
}

#[test]
fn oracle_equivalence_leveled() {
    randomized_oracle_run(EngineMode::LeveledHashRange, 1);
}

#[test]
fn oracle_equivalence_one_level() {
    randomized_oracle_run(EngineMode::OneLevel, 2);
}

#[test]
fn oracle_equivalence_single_tier() {
    randomized_oracle_run(EngineMode::SingleTier, 3);
}

#[test]
fn modes_produce_identical_logical_contents() {
    let mut finals: Vec<Vec<(Vec<u8>, Vec<u8>)>> = Vec::new();
    for mode in [
        EngineMode::LeveledHashRange,
        EngineMode::OneLevel,
        EngineMode::SingleTier,
    ] {
        let dir = tempfile::tempdir().unwrap();
        let engine = Engine::open(small_config(dir.path(), mode)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5000 {
            let k: u32 = rng.gen_range(0..800);
            let key = format!("key{k:06}").into_bytes();
            if rng.gen_bool(0.8) {
                let value: Vec<u8> = (0..rng.gen_range(1..60)).map(|_| rng.gen()).collect();
                engine.put(&key, &value).unwrap();
            } else {
                engine.delete(&key).unwrap();
            }
        }
        engine.flush().unwrap();
        engine.maintain().unwrap();
        let mut it = engine.iterate(b"", None).unwrap();
        let mut got = Vec::new();
        while let Some(pair) = it.next().unwrap() {
            got.push(pair);
        }
        finals.push(got);
    }
    assert_eq!(finals[0], finals[1]);
    assert_eq!(finals[0], finals[2]);
}

#[test]
fn stats_are_monotone_and_start_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineMode::LeveledHashRange)).unwrap();
    let fresh = engine.stats();
    assert_eq!(fresh.user_bytes_written, 0);
    assert_eq!(fresh.gets, 0);
    let mut last = fresh;
    for i in 0..500u32 {
        engine.put(format!("k{i}").as_bytes(), b"value").unwrap();
        let _ = engine.get(format!("k{i}").as_bytes()).unwrap();
        let now = engine.stats();
        assert!(now.user_bytes_written >= last.user_bytes_written);
        assert!(now.disk_bytes_written >= last.disk_bytes_written);
        assert!(now.gets == last.gets + 1);
        last = now;
    }
    engine.flush().unwrap();
    let after = engine.stats();
    assert!(after.disk_bytes_written > last.disk_bytes_written);
    assert!(after.write_amplification() > 0.0);
}
