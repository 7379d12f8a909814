//! Latency recording and report formatting.

use serde::Serialize;
use tphdb::IoStatsSnapshot;

/// Operation classes tracked separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Read = 0,
    Write = 1,
    Scan = 2,
}

const CLASS_NAMES: [&str; 3] = ["read", "write", "scan"];

/// Per-thread latency sink, merged after the run.
#[derive(Debug, Default)]
pub struct LatencyRecorder {
    micros: [Vec<u32>; 3],
}

impl LatencyRecorder {
    pub fn record(&mut self, class: OpClass, micros: u64) {
        self.micros[class as usize].push(micros.min(u32::MAX as u64) as u32);
    }

    pub fn merge(&mut self, other: LatencyRecorder) {
        for (mine, theirs) in self.micros.iter_mut().zip(other.micros) {
            mine.extend(theirs);
        }
    }

    pub fn summarize(mut self) -> Vec<LatencySummary> {
        let mut out = Vec::new();
        for (i, samples) in self.micros.iter_mut().enumerate() {
            if samples.is_empty() {
                continue;
            }
            samples.sort_unstable();
            let count = samples.len();
            let sum: u64 = samples.iter().map(|&v| v as u64).sum();
            let p99 = samples[((count as f64 * 0.99) as usize).min(count - 1)];
            out.push(LatencySummary {
                class: CLASS_NAMES[i].to_string(),
                count: count as u64,
                avg_micros: sum as f64 / count as f64,
                p99_micros: p99 as f64,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencySummary {
    pub class: String,
    pub count: u64,
    pub avg_micros: f64,
    pub p99_micros: f64,
}

/// Everything a run reports.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub workload: String,
    pub mode: String,
    pub num_keys: u64,
    pub op_count: u64,
    pub threads: usize,
    pub seed: u64,
    pub load_secs: f64,
    pub run_secs: f64,
    pub ops_per_sec: f64,
    pub latencies: Vec<LatencySummary>,
    pub write_amplification: f64,
    pub read_amplification: f64,
    pub compaction_bytes_read: u64,
    pub compaction_bytes_written: u64,
    pub resident_index_bytes_per_key: f64,
    pub live_keys: u64,
    pub piece_counts_per_level: Vec<Vec<usize>>,
    pub counters: IoStatsSnapshot,
}

impl BenchReport {
    /// Human-readable block plus machine-readable `name=value` lines and
    /// one JSON line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        use std::fmt::Write;
        writeln!(out, "workload {} on mode {}", self.workload, self.mode).unwrap();
        writeln!(
            out,
            "  keys {}  ops {}  threads {}  seed {}",
            self.num_keys, self.op_count, self.threads, self.seed
        )
        .unwrap();
        writeln!(
            out,
            "  load {:.2}s  run {:.2}s  throughput {:.0} ops/s",
            self.load_secs, self.run_secs, self.ops_per_sec
        )
        .unwrap();
        for l in &self.latencies {
            writeln!(
                out,
                "  {:>5}: count {:>9}  avg {:>8.1} us  p99 {:>8.1} us",
                l.class, l.count, l.avg_micros, l.p99_micros
            )
            .unwrap();
        }
        writeln!(
            out,
            "  wa {:.3}  ra {:.3}  index {:.2} B/key over {} live keys",
            self.write_amplification,
            self.read_amplification,
            self.resident_index_bytes_per_key,
            self.live_keys
        )
        .unwrap();
        writeln!(
            out,
            "  compaction read {} B written {} B  pieces/level {:?}",
            self.compaction_bytes_read,
            self.compaction_bytes_written,
            self.piece_counts_per_level
                .iter()
                .map(|l| l.iter().sum::<usize>())
                .collect::<Vec<_>>()
        )
        .unwrap();
        writeln!(out, "workload={}", self.workload).unwrap();
        writeln!(out, "mode={}", self.mode).unwrap();
        writeln!(out, "ops_per_sec={:.1}", self.ops_per_sec).unwrap();
        writeln!(out, "wa={:.4}", self.write_amplification).unwrap();
        writeln!(out, "ra={:.4}", self.read_amplification).unwrap();
        writeln!(out, "compaction_bytes_read={}", self.compaction_bytes_read).unwrap();
        writeln!(out, "index_bytes_per_key={:.3}", self.resident_index_bytes_per_key).unwrap();
        for l in &self.latencies {
            writeln!(out, "{}_avg_us={:.1}", l.class, l.avg_micros).unwrap();
            writeln!(out, "{}_p99_us={:.1}", l.class, l.p99_micros).unwrap();
        }
        writeln!(out, "json={}", serde_json::to_string(self).unwrap()).unwrap();
        out
    }
}
