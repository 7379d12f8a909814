//! Drives workloads against an engine instance and verifies stores
//! after the fact.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tphdb::{Engine, EngineConfig, EngineMode};

use crate::report::{BenchReport, LatencyRecorder, OpClass};
use crate::workload::{
    final_key_indices, key_bytes, load_indices, value_bytes, Op, OpStream, WorkloadSpec,
};

/// Sidecar written next to the store so `verify` can regenerate the
/// expected contents.
#[derive(Debug, Serialize, Deserialize)]
pub struct BenchMeta {
    pub spec: WorkloadSpec,
    pub mode: EngineMode,
}

const META_FILE: &str = "bench_meta.json";

pub fn write_meta(dir: &Path, meta: &BenchMeta) -> Result<()> {
    let path = dir.join(META_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<BenchMeta> {
    let path = dir.join(META_FILE);
    let bytes = std::fs::read(&path)
        .with_context(|| format!("no benchmark metadata at {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Load phase: every key in `[0, num_keys)` inserted in per-thread
/// shuffled order.
fn load_phase(engine: &Arc<Engine>, spec: &WorkloadSpec) -> Result<f64> {
    let started = Instant::now();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for thread in 0..spec.threads {
            let engine = engine.clone();
            let spec = spec.clone();
            handles.push(scope.spawn(move || -> Result<()> {
                for idx in load_indices(&spec, thread) {
                    engine.put(&key_bytes(&spec, idx), &value_bytes(&spec, idx))?;
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("load thread panicked")?;
        }
        Ok(())
    })?;
    engine.flush()?;
    Ok(started.elapsed().as_secs_f64())
}

/// Op phase: each thread walks its deterministic op stream.
fn op_phase(
    engine: &Arc<Engine>,
    spec: &WorkloadSpec,
) -> Result<(f64, LatencyRecorder)> {
    let started = Instant::now();
    let inserted_hint = Arc::new(AtomicU64::new(0));
    let mut merged = LatencyRecorder::default();
    let recorders = std::thread::scope(|scope| -> Result<Vec<LatencyRecorder>> {
        let mut handles = Vec::new();
        for thread in 0..spec.threads {
            let engine = engine.clone();
            let spec = spec.clone();
            let _hint = inserted_hint.clone();
            handles.push(scope.spawn(move || -> Result<LatencyRecorder> {
                let mut rec = LatencyRecorder::default();
                for op in OpStream::new(&spec, thread) {
                    let t0 = Instant::now();
                    match op {
                        Op::Update(idx) | Op::Insert(idx) => {
                            engine.put(&key_bytes(&spec, idx), &value_bytes(&spec, idx))?;
                            rec.record(OpClass::Write, t0.elapsed().as_micros() as u64);
                        }
                        Op::Read(idx) => {
                            let _ = engine.get(&key_bytes(&spec, idx))?;
                            rec.record(OpClass::Read, t0.elapsed().as_micros() as u64);
                        }
                        Op::Rmw(idx) => {
                            let key = key_bytes(&spec, idx);
                            let _ = engine.get(&key)?;
                            engine.put(&key, &value_bytes(&spec, idx))?;
                            rec.record(OpClass::Write, t0.elapsed().as_micros() as u64);
                        }
                        Op::Scan(idx, len) => {
                            let start = key_bytes(&spec, idx);
                            let mut it = engine.iterate(&start, None)?;
                            for _ in 0..len {
                                if it.next()?.is_none() {
                                    break;
                                }
                            }
                            rec.record(OpClass::Scan, t0.elapsed().as_micros() as u64);
                        }
                    }
                }
                Ok(rec)
            }));
        }
        let mut recs = Vec::new();
        for h in handles {
            recs.push(h.join().expect("worker thread panicked")?);
        }
        Ok(recs)
    })?;
    for r in recorders {
        merged.merge(r);
    }
    Ok((started.elapsed().as_secs_f64(), merged))
}

/// Runs load plus op phase and emits the report. The target directory
/// must be empty (or absent) so the load phase starts from scratch.
pub fn run(spec: &WorkloadSpec, config: EngineConfig) -> Result<BenchReport> {
    spec.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    if config.dir.exists() && std::fs::read_dir(&config.dir)?.next().is_some() {
        bail!(
            "target directory {} is not empty; load phases need a fresh store",
            config.dir.display()
        );
    }
    let mode = config.mode;
    let dir = config.dir.clone();
    let engine = Arc::new(Engine::open(config).map_err(|e| anyhow::anyhow!("{e}"))?);

    let load_secs = load_phase(&engine, spec)?;
    let (run_secs, recorder) = op_phase(&engine, spec)?;
    engine.flush()?;
    engine.maintain()?;

    let counters = engine.stats();
    let resident = engine.resident_index_bytes();
    let live = engine.live_table_keys();
    let report = BenchReport {
        workload: spec.name.to_string(),
        mode: mode.to_string(),
        num_keys: spec.num_keys,
        op_count: spec.op_count,
        threads: spec.threads,
        seed: spec.seed,
        load_secs,
        run_secs,
        ops_per_sec: spec.op_count as f64 / run_secs.max(1e-9),
        latencies: recorder.summarize(),
        write_amplification: counters.write_amplification(),
        read_amplification: counters.read_amplification(),
        compaction_bytes_read: counters.compaction_bytes_read,
        compaction_bytes_written: counters.compaction_bytes_written,
        resident_index_bytes_per_key: if live > 0 {
            resident.budget_total() as f64 / live as f64
        } else {
            0.0
        },
        live_keys: live,
        piece_counts_per_level: engine.piece_counts(),
        counters,
    };
    engine.close().map_err(|e| anyhow::anyhow!("{e}"))?;
    drop(engine);
    write_meta(&dir, &BenchMeta {
        spec: spec.clone(),
        mode,
    })?;
    Ok(report)
}

/// One row of a mode comparison.
#[derive(Debug, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub wa: f64,
    pub ra: f64,
    pub compaction_bytes_read: u64,
    pub wall_secs: f64,
    pub ops_per_sec: f64,
}

/// Runs the same spec under each (mode, fanout) setting into fresh
/// subdirectories and tabulates the amplification counters.
pub fn compare_modes(
    spec: &WorkloadSpec,
    base_dir: &Path,
    settings: &[(EngineMode, u32)],
    mut config_template: impl FnMut(EngineMode, u32, PathBuf) -> EngineConfig,
) -> Result<(Vec<CompareRow>, Vec<BenchReport>)> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &(mode, fanout) in settings {
        let label = format!("{mode}-fanout{fanout}");
        let dir = base_dir.join(&label);
        std::fs::create_dir_all(&dir)?;
        let config = config_template(mode, fanout, dir);
        let started = Instant::now();
        let report = run(spec, config)?;
        rows.push(CompareRow {
            label,
            wa: report.write_amplification,
            ra: report.read_amplification,
            compaction_bytes_read: report.compaction_bytes_read,
            wall_secs: started.elapsed().as_secs_f64(),
            ops_per_sec: report.ops_per_sec,
        });
        reports.push(report);
    }
    Ok((rows, reports))
}

pub fn render_comparison(rows: &[CompareRow]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(
        out,
        "{:<28} {:>8} {:>8} {:>18} {:>10} {:>12}",
        "setting", "wa", "ra", "compaction_read_B", "wall_s", "ops/s"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<28} {:>8.3} {:>8.3} {:>18} {:>10.2} {:>12.0}",
            r.label, r.wa, r.ra, r.compaction_bytes_read, r.wall_secs, r.ops_per_sec
        )
        .unwrap();
    }
    for r in rows {
        writeln!(out, "compare.{}.wa={:.4}", r.label, r.wa).unwrap();
        writeln!(out, "compare.{}.ra={:.4}", r.label, r.ra).unwrap();
        writeln!(
            out,
            "compare.{}.compaction_bytes_read={}",
            r.label, r.compaction_bytes_read
        )
        .unwrap();
    }
    out
}

/// Verification outcome: the first divergence found, if any.
#[derive(Debug)]
pub enum VerifyOutcome {
    Pass { keys_checked: u64 },
    Fail { diagnostics: String },
}

/// Re-derives the expected store contents from the recorded spec and
/// checks every key plus a full ordered scan.
pub fn verify(dir: &Path, seed_override: Option<u64>) -> Result<VerifyOutcome> {
    let meta = read_meta(dir)?;
    let mut spec = meta.spec;
    if let Some(seed) = seed_override {
        if seed != spec.seed {
            return Ok(VerifyOutcome::Fail {
                diagnostics: format!(
                    "seed mismatch: store recorded {}, verify asked for {seed}",
                    spec.seed
                ),
            });
        }
        spec.seed = seed;
    }
    let mut config = EngineConfig::new(dir);
    config.mode = meta.mode;
    let engine = match Engine::open(config) {
        Ok(e) => e,
        Err(e) => {
            return Ok(VerifyOutcome::Fail {
                diagnostics: format!("open failed: {e}"),
            })
        }
    };

    let mut indices = final_key_indices(&spec);
    // Point checks.
    for &idx in &indices {
        let key = key_bytes(&spec, idx);
        match engine.get(&key) {
            Ok(Some(v)) if v == value_bytes(&spec, idx) => {}
            Ok(Some(_)) => {
                return Ok(VerifyOutcome::Fail {
                    diagnostics: format!(
                        "value mismatch at key {}",
                        String::from_utf8_lossy(&key)
                    ),
                })
            }
            Ok(None) => {
                return Ok(VerifyOutcome::Fail {
                    diagnostics: format!("key missing: {}", String::from_utf8_lossy(&key)),
                })
            }
            Err(e) => {
                return Ok(VerifyOutcome::Fail {
                    diagnostics: format!(
                        "read error at key {}: {e}",
                        String::from_utf8_lossy(&key)
                    ),
                })
            }
        }
    }
    // Full scan must yield exactly the sorted key set.
    let mut expected: Vec<Vec<u8>> = indices
        .drain(..)
        .map(|idx| key_bytes(&spec, idx))
        .collect();
    expected.sort();
    let mut it = match engine.iterate(b"", None) {
        Ok(it) => it,
        Err(e) => {
            return Ok(VerifyOutcome::Fail {
                diagnostics: format!("scan open failed: {e}"),
            })
        }
    };
    let mut rank = 0usize;
    loop {
        match it.next() {
            Ok(Some((key, _))) => {
                if rank >= expected.len() || key != expected[rank] {
                    return Ok(VerifyOutcome::Fail {
                        diagnostics: format!(
                            "scan divergence at rank {rank}: got {}",
                            String::from_utf8_lossy(&key)
                        ),
                    });
                }
                rank += 1;
            }
            Ok(None) => break,
            Err(e) => {
                return Ok(VerifyOutcome::Fail {
                    diagnostics: format!("scan error at rank {rank}: {e}"),
                })
            }
        }
    }
    if rank != expected.len() {
        return Ok(VerifyOutcome::Fail {
            diagnostics: format!("scan ended early: {rank} of {} keys", expected.len()),
        });
    }
    Ok(VerifyOutcome::Pass {
        keys_checked: expected.len() as u64,
    })
}
