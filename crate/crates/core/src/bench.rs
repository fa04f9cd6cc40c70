//! Wall-clock scaling of the ZETA forward pass against the dense oracle.
//!
//! The chunk count is held fixed, so the chunk size grows with `N` and each
//! query inspects a constant number of sorted chunks. The dense backend would
//! materialize an `N × N` score matrix; when that exceeds the memory budget
//! the row is reported as `OOM` instead of being run.

use std::io::{self, Write};
use std::time::Instant;

use crate::cauchy_attention::{attend_cached, AttendOptions, AttentionParams};
use crate::error::{param_err, Result, ZetaError};
use crate::numerics::{gaussian_matrix, Rng};
use crate::oracle::{dense_causal_attention, SoftmaxVariant};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub k: usize,
    pub num_chunks: usize,
    pub seed: u64,
    pub parallel: bool,
    /// Upper bound on the dense score matrix, in bytes.
    pub dense_memory_budget: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1024, 2048, 4096, 8192, 16384, 32768, 65536],
            repetitions: 5,
            d_k: 3,
            d_v: 64,
            k: 32,
            num_chunks: 16,
            seed: 0,
            parallel: false,
            dense_memory_budget: 2 << 30,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return param_err("bench sizes must be non-empty and strictly increasing");
        }
        if self.repetitions < 3 {
            return param_err(format!("need at least 3 repetitions, got {}", self.repetitions));
        }
        if self.num_chunks == 0 {
            return param_err("need at least one chunk");
        }
        AttentionParams::new(self.d_k, self.d_v, 1, self.k).map(|_| ())
    }

    pub fn chunk_size(&self, n: usize) -> usize {
        n.div_ceil(self.num_chunks).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Zeta,
    Dense,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Zeta => "zeta",
            Backend::Dense => "dense",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub backend: Backend,
    pub n: usize,
    /// `None` when the backend did not fit the memory budget.
    pub timing: Option<Timing>,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(mut samples_ms: Vec<f64>) -> Timing {
    samples_ms.sort_by(f64::total_cmp);
    Timing {
        median_ms: percentile(&samples_ms, 50.0),
        p10_ms: percentile(&samples_ms, 10.0),
        p90_ms: percentile(&samples_ms, 90.0),
    }
}

fn time_reps<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<Timing> {
    f()?; // warm-up
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(summarize(samples))
}

/// Bytes of the `N × N` score matrix a dense forward pass would hold.
pub fn dense_score_bytes(n: usize) -> usize {
    n.saturating_mul(n).saturating_mul(std::mem::size_of::<f64>())
}

/// Times both backends at every size. `progress` receives one line per row.
pub fn run_bench<P: FnMut(&str)>(cfg: &BenchConfig, mut progress: P) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut checked_parallel = !cfg.parallel;
    for &n in &cfg.sizes {
        let mut rng = Rng::fork(cfg.seed, n as u64);
        let q = gaussian_matrix(&mut rng, n, cfg.d_k, 1.0)?;
        let k = gaussian_matrix(&mut rng, n, cfg.d_k, 1.0)?;
        let v = gaussian_matrix(&mut rng, n, cfg.d_v, 1.0)?;
        let params = AttentionParams::new(cfg.d_k, cfg.d_v, cfg.chunk_size(n), cfg.k)?;
        let opts = AttendOptions {
            quantization: None,
            parallel: cfg.parallel,
        };

        if !checked_parallel {
            let (par, _) = attend_cached(&q, &k, &v, &params, &opts)?;
            let (seq, _) = attend_cached(&q, &k, &v, &params, &AttendOptions::default())?;
            if par.as_slice() != seq.as_slice() {
                return Err(ZetaError::Evaluation(format!(
                    "parallel and sequential outputs differ at N={n}"
                )));
            }
            checked_parallel = true;
        }

        let zeta = time_reps(cfg.repetitions, || attend_cached(&q, &k, &v, &params, &opts).map(|_| ()))?;
        progress(&format!("zeta n={n} median={:.3}ms", zeta.median_ms));
        rows.push(BenchRow {
            backend: Backend::Zeta,
            n,
            timing: Some(zeta),
        });

        let dense = if dense_score_bytes(n) <= cfg.dense_memory_budget {
            let t = time_reps(cfg.repetitions, || {
                dense_causal_attention(&q, &k, &v, SoftmaxVariant::Cauchy, &params).map(|_| ())
            })?;
            progress(&format!("dense n={n} median={:.3}ms", t.median_ms));
            Some(t)
        } else {
            progress(&format!("dense n={n} OOM ({} bytes over budget)", dense_score_bytes(n)));
            None
        };
        rows.push(BenchRow {
            backend: Backend::Dense,
            n,
            timing: dense,
        });
    }
    Ok(rows)
}

/// `(N, T(N) / T(N_prev))` for consecutive timed sizes of one backend.
pub fn doubling_ratios(rows: &[BenchRow], backend: Backend) -> Vec<(usize, f64)> {
    let timed: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.backend == backend)
        .filter_map(|r| r.timing.as_ref().map(|t| (r.n, t.median_ms)))
        .collect();
    timed.windows(2).map(|w| (w[1].0, w[1].1 / w[0].1)).collect()
}

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> io::Result<()> {
    writeln!(w, "backend,n,median_ms,p10_ms,p90_ms")?;
    for r in rows {
        match &r.timing {
            Some(t) => writeln!(
                w,
                "{},{},{:.3},{:.3},{:.3}",
                r.backend.name(),
                r.n,
                t.median_ms,
                t.p10_ms,
                t.p90_ms
            )?,
            None => writeln!(w, "{},{},OOM,OOM,OOM", r.backend.name(), r.n)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let t = summarize(vec![5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(t.median_ms, 3.0);
        assert_eq!(t.p10_ms, 1.0);
        assert_eq!(t.p90_ms, 5.0);
    }

    #[test]
    fn rows_for_every_size_with_oom_marker() {
        let cfg = BenchConfig {
            sizes: vec![64, 128, 256],
            repetitions: 3,
            d_v: 4,
            k: 4,
            num_chunks: 4,
            parallel: true,
            dense_memory_budget: dense_score_bytes(128),
            ..Default::default()
        };
        let mut lines = 0;
        let rows = run_bench(&cfg, |_| lines += 1).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(lines, 6);
        assert!(rows[5].timing.is_none());
        assert_eq!(doubling_ratios(&rows, Backend::Zeta).len(), 2);
        assert_eq!(doubling_ratios(&rows, Backend::Dense).len(), 1);
        let mut csv = Vec::new();
        write_bench_csv(&mut csv, &rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("backend,n,median_ms,p10_ms,p90_ms\nzeta,64,"));
        assert!(text.trim_end().ends_with("dense,256,OOM,OOM,OOM"));
    }

    #[test]
    fn validation() {
        let bad = BenchConfig {
            sizes: vec![128, 64],
            ..Default::default()
        };
        assert!(run_bench(&bad, |_| {}).is_err());
        let few = BenchConfig {
            repetitions: 2,
            ..Default::default()
        };
        assert!(run_bench(&few, |_| {}).is_err());
    }
}
