use super::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn distinct_hashes(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = std::collections::HashSet::with_capacity(n);
    while set.len() < n {
        set.insert(rng.gen::<u64>());
    }
    set.into_iter().collect()
}

#[test]
fn bucket_of_without_dense_buckets_is_uniform_mod() {
    let pair = HashPair {
        h0: 123,
        h1: 0xfeed_face_cafe_beef,
    };
    for m in [1u32, 2, 7, 100] {
        let b = bucket_of(pair, m, 0, 0.6);
        assert_eq!(b as u64, pair.h1 % m as u64);
        assert!(b < m);
    }
}

#[test]
fn bucket_of_single_bucket() {
    for h1 in [0u64, 1, u64::MAX] {
        let pair = HashPair { h0: 9, h1 };
        assert_eq!(bucket_of(pair, 1, 0, 0.6), 0);
    }
}

#[test]
fn bucket_of_routes_dense_fraction_of_keys() {
    // Oracle: direct enumeration of the classification over the sample.
    let seed = 7u64;
    let (m, d, f) = (2000u32, 600u32, 0.6);
    let mut dense = 0usize;
    let n = 10_000;
    for &kh in &distinct_hashes(n, 42) {
        let pair = crate::hash::hash_pair(kh, seed);
        let b = bucket_of(pair, m, d, f);
        assert!(b < m);
        if b < d {
            dense += 1;
        }
    }
    let frac = dense as f64 / n as f64;
    assert!((frac - 0.60).abs() <= 0.02, "dense fraction {frac}");
}

#[test]
fn position_identity_params() {
    let pair = HashPair {
        h0: 0xdead_beef_0bad_f00d,
        h1: 0x1234_5678_9abc_def0,
    };
    for ts in [1u64, 2, 1000, u64::MAX] {
        assert_eq!(
            position(pair, BucketParams { alpha: 0, beta: 0 }, ts),
            pair.h0 % ts
        );
    }
}

#[test]
fn position_annihilated_multiplier() {
    let pair = HashPair { h0: 555, h1: 0 };
    for alpha in [0u16, 1, 999, u16::MAX] {
        assert_eq!(
            position(pair, BucketParams { alpha, beta: 77 }, 1000),
            (555 + 77) % 1000
        );
    }
}

#[test]
fn position_matches_wide_arithmetic_oracle() {
    // Oracle: the same formula in 128-bit arithmetic, truncated to 64
    // bits before the final reduction.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let pair = HashPair {
            h0: rng.gen(),
            h1: rng.gen(),
        };
        let params = BucketParams {
            alpha: rng.gen(),
            beta: rng.gen(),
        };
        let ts = rng.gen::<u64>().max(1);
        let wide = (pair.h0 as u128 + pair.h1 as u128 * params.alpha as u128 + params.beta as u128)
            % (1u128 << 64);
        let expected = (wide % ts as u128) as u64;
        assert_eq!(position(pair, params, ts), expected);
    }
}

#[test]
fn build_singleton() {
    let f = build(&[0xabcd], 1, &CpHashConfig::default()).unwrap();
    assert_eq!(f.table_size(), 2);
    let slot = f.evaluate(0xabcd);
    assert!(slot < 2);
    assert_eq!(f.dictionary_len(), 1);
}

#[test]
fn build_duplicate_inputs_rejected() {
    let err = build(&[5, 9, 5], 1, &CpHashConfig::default()).unwrap_err();
    assert!(matches!(err, Error::DuplicateKeyHash(5)));
}

#[test]
fn build_large_set_occupancy_is_exact() {
    // Oracle: exhaustive occupancy check over every key.
    let keys = distinct_hashes(100_000, 1);
    let f = build(&keys, 77, &CpHashConfig::default()).unwrap();
    let mut occ = vec![false; f.table_size() as usize];
    for &k in &keys {
        let s = f.evaluate(k) as usize;
        assert!(!occ[s], "collision at slot {s}");
        occ[s] = true;
    }
    assert_eq!(occ.iter().filter(|&&b| b).count(), keys.len());
}

#[test]
fn build_load_factor_at_default_scale() {
    let keys = distinct_hashes(50_000, 2);
    let f = build(&keys, 3, &CpHashConfig::default()).unwrap();
    if f.growth_steps() == 0 {
        let load = f.num_keys() as f64 / f.table_size() as f64;
        assert!(load >= 0.90, "load factor {load}");
    }
}

#[test]
fn evaluate_is_total_for_absent_keys() {
    let keys = distinct_hashes(1000, 3);
    let f = build(&keys, 9, &CpHashConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let k: u64 = rng.gen();
        assert!(f.evaluate(k) < f.table_size());
    }
}

#[test]
fn codec_roundtrip_evaluates_identically() {
    let keys = distinct_hashes(10_000, 5);
    let cfg = CpHashConfig::default();
    let f = build(&keys, 11, &cfg).unwrap();
    let bytes = encode(&f);
    let g = decode(&bytes, cfg.dense_key_fraction).unwrap();
    assert_eq!(f, g);
    for &k in &keys {
        assert_eq!(f.evaluate(k), g.evaluate(k));
    }
}

#[test]
fn codec_rejects_corruption() {
    let keys = distinct_hashes(100, 6);
    let f = build(&keys, 1, &CpHashConfig::default()).unwrap();
    let mut bytes = encode(&f);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(decode(&bytes, 0.6).is_err());
}

#[test]
fn build_is_deterministic() {
    let keys = distinct_hashes(20_000, 7);
    let cfg = CpHashConfig::default();
    let a = encode(&build(&keys, 5, &cfg).unwrap());
    let b = encode(&build(&keys, 5, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn param_dictionary_reuse_bounds() {
    let keys = distinct_hashes(30_000, 8);
    let f = build(&keys, 2, &CpHashConfig::default()).unwrap();
    assert!(f.dictionary_len() as u32 <= f.num_buckets());
    // Reuse should be substantial, not incidental.
    assert!(
        (f.dictionary_len() as u32) < f.num_buckets() / 2,
        "dictionary {} vs buckets {}",
        f.dictionary_len(),
        f.num_buckets()
    );
}

#[test]
fn empty_build_is_valid() {
    let f = build(&[], 1, &CpHashConfig::default()).unwrap();
    assert_eq!(f.table_size(), 0);
    assert_eq!(f.evaluate(42), 0);
    let g = decode(&encode(&f), 0.6).unwrap();
    assert_eq!(f, g);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn collision_free_and_in_range(seed in 0u64..1000, n in 1usize..400) {
            let keys = distinct_hashes(n, seed.wrapping_add(1031));
            let f = build(&keys, seed, &CpHashConfig::default()).unwrap();
            let mut seen = std::collections::HashSet::new();
            for &k in &keys {
                let s = f.evaluate(k);
                prop_assert!(s < f.table_size());
                prop_assert!(seen.insert(s));
            }
        }

        #[test]
        fn roundtrip_preserves_function(seed in 0u64..500, n in 0usize..200) {
            let keys = distinct_hashes(n, seed.wrapping_mul(2654435761).wrapping_add(17));
            let f = build(&keys, seed, &CpHashConfig::default()).unwrap();
            let g = decode(&encode(&f), 0.6).unwrap();
            prop_assert_eq!(f, g);
        }

        #[test]
        fn reduce_matches_native(x in any::<u64>(), n in 1u64..) {
            prop_assert_eq!(reduce(x, n), x % n);
        }
    }
}
