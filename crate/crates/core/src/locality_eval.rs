//! How well Morton-code proximity tracks Euclidean proximity.
//!
//! `locality_sweep` compares exact Euclidean kNN with kNN by absolute code
//! difference on Gaussian point clouds. `k_ablation` measures recall of the
//! chunked top-k search against the brute-force oracle as `k` varies.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{param_err, Result};
use crate::morton::{default_bits, encode_batch, QuantizationConfig, ZCode};
use crate::numerics::{gaussian_matrix, Matrix, Rng};
use crate::topk_index::{exact_topk_oracle, recall_at_k, squared_distance, ChunkedIndex, SearchBudget};

#[derive(Clone, Debug)]
pub struct LocalitySweepConfig {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub neighbors: usize,
    pub trials: usize,
    pub seed: u64,
    /// Bits per dimension; `None` uses the full 63-bit budget.
    pub bits: Option<usize>,
}

impl Default for LocalitySweepConfig {
    fn default() -> Self {
        Self {
            dims: (1..=8).collect(),
            sizes: vec![512, 1024, 2048],
            neighbors: 64,
            trials: 10,
            seed: 0,
            bits: None,
        }
    }
}

impl LocalitySweepConfig {
    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.sizes.is_empty() || self.neighbors == 0 || self.trials == 0 {
            return param_err("locality sweep needs at least one dim, size, neighbor and trial");
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 2) {
            return param_err(format!("sample size {n} leaves no neighbors"));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d == 0 || d > crate::morton::MAX_DIMS) {
            return param_err(format!("unsupported dimension {d}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalityRow {
    pub d_k: usize,
    pub n: usize,
    pub trial: usize,
    pub mean_overlap: f64,
}

fn stream_id(a: usize, b: usize, trial: usize) -> u64 {
    ((a as u64) << 40) ^ ((b as u64) << 16) ^ trial as u64
}

/// Exact Euclidean neighbors of `i` (excluding itself), ties by index.
fn euclidean_neighbors(points: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..points.rows())
        .filter(|&j| j != i)
        .map(|j| (squared_distance(points.row(i), points.row(j)), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.into_iter().map(|(_, j)| j).collect()
}

/// Neighbors of `sorted[pos]` by code distance, grown outward from `pos`.
fn code_neighbors(sorted: &[ZCode], pos: usize, k: usize) -> Vec<usize> {
    let me = sorted[pos].code;
    let (mut left, mut right) = (pos, pos + 1);
    let mut out = Vec::with_capacity(k);
    while out.len() < k && (left > 0 || right < sorted.len()) {
        let take_left = match (left > 0, right < sorted.len()) {
            (true, true) => {
                let (l, r) = (&sorted[left - 1], &sorted[right]);
                (me.abs_diff(l.code), l.source_index) < (me.abs_diff(r.code), r.source_index)
            }
            (l, _) => l,
        };
        if take_left {
            left -= 1;
            out.push(sorted[left].source_index);
        } else {
            out.push(sorted[right].source_index);
            right += 1;
        }
    }
    out
}

/// Mean fraction of each point's exact kNN that are also its code-space kNN.
pub fn neighbor_overlap(points: &Matrix, cfg: &QuantizationConfig, neighbors: usize) -> Result<f64> {
    let n = points.rows();
    let k = neighbors.min(n.saturating_sub(1));
    if k == 0 {
        return param_err("need at least two points");
    }
    let mut sorted = encode_batch(points, cfg)?;
    sorted.sort_unstable_by_key(|z| (z.code, z.source_index));
    let mut position = vec![0usize; n];
    for (p, z) in sorted.iter().enumerate() {
        position[z.source_index] = p;
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let exact = euclidean_neighbors(points, i, k);
            let approx = code_neighbors(&sorted, position[i], k);
            let hits = exact.iter().filter(|j| approx.contains(j)).count();
            hits as f64 / k as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / n as f64)
}

pub fn locality_sweep(cfg: &LocalitySweepConfig) -> Result<Vec<LocalityRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize, usize)> = cfg
        .dims
        .iter()
        .flat_map(|&d| {
            cfg.sizes
                .iter()
                .flat_map(move |&n| (0..cfg.trials).map(move |t| (d, n, t)))
        })
        .collect();
    cells
        .into_iter()
        .map(|(d, n, trial)| {
            let mut rng = Rng::fork(cfg.seed, stream_id(d, n, trial));
            let points = gaussian_matrix(&mut rng, n, d, 1.0)?;
            let bits = cfg.bits.unwrap_or_else(|| default_bits(d));
            let qcfg = QuantizationConfig::fit(&points, bits)?;
            Ok(LocalityRow {
                d_k: d,
                n,
                trial,
                mean_overlap: neighbor_overlap(&points, &qcfg, cfg.neighbors)?,
            })
        })
        .collect()
}

pub fn write_locality_csv<W: Write>(mut w: W, seed: u64, rows: &[LocalityRow]) -> io::Result<()> {
    writeln!(w, "# zeta locality sweep, seed={seed}, dist=gaussian")?;
    writeln!(w, "d_k,n,trial,mean_overlap")?;
    for r in rows {
        writeln!(w, "{},{},{},{:.6}", r.d_k, r.n, r.trial, r.mean_overlap)?;
    }
    Ok(())
}

/// Average `mean_overlap` over trials for each `(d_k, n)` cell.
pub fn mean_overlap(rows: &[LocalityRow], d_k: usize, n: usize) -> Option<f64> {
    let sel: Vec<f64> = rows
        .iter()
        .filter(|r| r.d_k == d_k && r.n == n)
        .map(|r| r.mean_overlap)
        .collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

#[derive(Clone, Debug)]
pub struct KAblationConfig {
    pub n: usize,
    pub d_k: usize,
    pub chunk_size: usize,
    pub ks: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub bits: Option<usize>,
}

impl Default for KAblationConfig {
    fn default() -> Self {
        Self {
            n: 512,
            d_k: 3,
            chunk_size: 32,
            ks: vec![16, 24, 32, 40, 48],
            trials: 10,
            seed: 0,
            bits: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KAblationRow {
    pub trial: usize,
    pub k: usize,
    pub recall: f64,
}

/// Recall of the chunked search per trial and `k`, averaged over every query
/// that has at least one admissible key.
pub fn k_ablation_trials(cfg: &KAblationConfig) -> Result<Vec<KAblationRow>> {
    if cfg.ks.is_empty() || cfg.trials == 0 || cfg.n <= cfg.chunk_size {
        return param_err("k ablation needs ks, trials and n larger than one chunk");
    }
    let bits = cfg.bits.unwrap_or_else(|| default_bits(cfg.d_k));
    let per_trial: Vec<Vec<KAblationRow>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<KAblationRow>> {
            let mut rng = Rng::fork(cfg.seed, stream_id(cfg.d_k, cfg.n, trial));
            let q = gaussian_matrix(&mut rng, cfg.n, cfg.d_k, 1.0)?;
            let k = gaussian_matrix(&mut rng, cfg.n, cfg.d_k, 1.0)?;
            let qcfg = QuantizationConfig::fit(&q.vstack(&k)?, bits)?;
            let key_codes = encode_batch(&k, &qcfg)?;
            let query_codes = encode_batch(&q, &qcfg)?;
            let index = ChunkedIndex::build(&key_codes, cfg.chunk_size)?;
            cfg.ks
                .iter()
                .map(|&kk| {
                    let budget = SearchBudget::new(kk, cfg.chunk_size)?;
                    let recalls: Vec<f64> = (cfg.chunk_size..cfg.n)
                        .map(|i| {
                            let approx = index.query(query_codes[i].code, i, kk);
                            let exact = exact_topk_oracle(&k, q.row(i), i, budget);
                            recall_at_k(&approx, &exact)
                        })
                        .collect();
                    Ok(KAblationRow {
                        trial,
                        k: kk,
                        recall: recalls.iter().sum::<f64>() / recalls.len() as f64,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// `(k, mean recall over trials)` in the order of `cfg.ks`.
pub fn k_ablation(cfg: &KAblationConfig) -> Result<Vec<(usize, f64)>> {
    let rows = k_ablation_trials(cfg)?;
    Ok(cfg
        .ks
        .iter()
        .map(|&k| {
            let r: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.recall).collect();
            (k, r.iter().sum::<f64>() / r.len() as f64)
        })
        .collect())
}

pub fn write_k_ablation_csv<W: Write>(mut w: W, rows: &[(usize, f64)]) -> io::Result<()> {
    writeln!(w, "k,recall")?;
    for (k, r) in rows {
        writeln!(w, "{k},{r:.6}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dim_overlap_is_exact() {
        let cfg = LocalitySweepConfig {
            dims: vec![1],
            sizes: vec![300],
            neighbors: 16,
            trials: 2,
            ..Default::default()
        };
        for row in locality_sweep(&cfg).unwrap() {
            assert_eq!(row.mean_overlap, 1.0);
        }
    }

    #[test]
    fn everything_is_a_neighbor_when_n_is_k_plus_one() {
        let cfg = LocalitySweepConfig {
            dims: vec![3, 6],
            sizes: vec![65],
            neighbors: 64,
            trials: 1,
            ..Default::default()
        };
        for row in locality_sweep(&cfg).unwrap() {
            assert_eq!(row.mean_overlap, 1.0);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_bounded() {
        let cfg = LocalitySweepConfig {
            dims: vec![2, 4],
            sizes: vec![200],
            neighbors: 8,
            trials: 2,
            seed: 17,
            bits: None,
        };
        let a = locality_sweep(&cfg).unwrap();
        assert_eq!(a, locality_sweep(&cfg).unwrap());
        assert!(a.iter().all(|r| (0.0..=1.0).contains(&r.mean_overlap)));
        let mut csv = Vec::new();
        write_locality_csv(&mut csv, 17, &a).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("# zeta locality sweep, seed=17, dist=gaussian\nd_k,n,trial,mean_overlap\n2,200,0,"));
    }

    #[test]
    fn full_budget_gives_full_recall() {
        let cfg = KAblationConfig {
            n: 64,
            d_k: 3,
            chunk_size: 8,
            ks: vec![56, 64],
            trials: 2,
            seed: 3,
            bits: None,
        };
        for (_, r) in k_ablation(&cfg).unwrap() {
            assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn one_dim_recall_is_exact() {
        let cfg = KAblationConfig {
            n: 256,
            d_k: 1,
            chunk_size: 16,
            ks: vec![1, 4, 9],
            trials: 2,
            seed: 5,
            bits: None,
        };
        for (_, r) in k_ablation(&cfg).unwrap() {
            assert_eq!(r, 1.0);
        }
    }
}
