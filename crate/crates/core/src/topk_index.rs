//! Chunked causal top-k retrieval in Z-order code space.
//!
//! Keys are split by position into chunks of `M` tokens and each chunk is
//! sorted by code. A query at position `i` may only see chunks
//! `0..floor(i / M)`, so every attended key `j` satisfies `j < floor(i/M)·M`.
//! Within each admissible chunk the query's insertion point is found by binary
//! search and a window of up to `k` codes is grown outward from it; the
//! per-chunk windows are then merged by code distance.

use crate::error::{param_err, Result};
use crate::morton::ZCode;
use crate::numerics::Matrix;

/// Neighbor count `k` and chunk size `M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchBudget {
    pub k: usize,
    pub chunk_size: usize,
}

impl SearchBudget {
    pub fn new(k: usize, chunk_size: usize) -> Result<Self> {
        if k == 0 || chunk_size == 0 {
            return param_err(format!("k and chunk size must be >= 1, got k={k} M={chunk_size}"));
        }
        Ok(Self { k, chunk_size })
    }

    /// Number of keys a query at `pos` may attend to before the `k` cap.
    pub fn admissible(&self, pos: usize) -> usize {
        (pos / self.chunk_size) * self.chunk_size
    }
}

/// Keys attended by one query. The history-mean slot is always present in
/// addition to `indices`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TopKSelection {
    pub indices: Vec<usize>,
    pub has_mean_slot: bool,
}

impl TopKSelection {
    pub fn new(indices: Vec<usize>) -> Self {
        Self {
            indices,
            has_mean_slot: true,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ChunkedIndex {
    chunk_size: usize,
    len: usize,
    chunks: Vec<Vec<ZCode>>,
}

impl ChunkedIndex {
    /// `key_codes[p]` is the code of the key at position `p`.
    pub fn build(key_codes: &[ZCode], chunk_size: usize) -> Result<Self> {
        if key_codes.is_empty() {
            return param_err("cannot index an empty key set");
        }
        if chunk_size == 0 {
            return param_err("chunk size must be >= 1");
        }
        let chunks = key_codes
            .chunks(chunk_size)
            .map(|c| {
                let mut c = c.to_vec();
                c.sort_unstable_by_key(|z| (z.code, z.source_index));
                c
            })
            .collect();
        Ok(Self {
            chunk_size,
            len: key_codes.len(),
            chunks,
        })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn chunk(&self, c: usize) -> &[ZCode] {
        &self.chunks[c]
    }

    /// The `k` admissible keys nearest to `query_code` for the query at
    /// `query_pos`. The returned indices are ordered by code distance, then
    /// position.
    pub fn query(&self, query_code: u64, query_pos: usize, k: usize) -> TopKSelection {
        debug_assert!(query_pos < self.len);
        let visible = (query_pos / self.chunk_size).min(self.chunks.len());
        let mut candidates: Vec<(u64, usize)> = Vec::with_capacity(visible * k);
        for chunk in &self.chunks[..visible] {
            window_around(chunk, query_code, k, &mut candidates);
        }
        let keep = k.min(candidates.len());
        if candidates.len() > keep {
            candidates.select_nth_unstable(keep);
            candidates.truncate(keep);
        }
        candidates.sort_unstable();
        TopKSelection::new(candidates.into_iter().map(|(_, j)| j).collect())
    }
}

/// Grows a window of up to `k` entries outward from the insertion point of
/// `query` in the sorted `chunk`, always taking the closer frontier entry.
fn window_around(chunk: &[ZCode], query: u64, k: usize, out: &mut Vec<(u64, usize)>) {
    let split = chunk.partition_point(|z| z.code < query);
    let (mut left, mut right) = (split, split);
    for _ in 0..k.min(chunk.len()) {
        let take_left = match (left > 0, right < chunk.len()) {
            (true, true) => {
                let l = &chunk[left - 1];
                let r = &chunk[right];
                let dl = query.abs_diff(l.code);
                let dr = query.abs_diff(r.code);
                (dl, l.source_index) < (dr, r.source_index)
            }
            (true, false) => true,
            (false, true) => false,
            (false, false) => break,
        };
        let z = if take_left {
            left -= 1;
            &chunk[left]
        } else {
            right += 1;
            &chunk[right - 1]
        };
        out.push((query.abs_diff(z.code), z.source_index));
    }
}

/// Retrieves selections for every query position.
pub fn query_all(index: &ChunkedIndex, query_codes: &[ZCode], k: usize, parallel: bool) -> Vec<TopKSelection> {
    use rayon::prelude::*;
    let run = |z: &ZCode| index.query(z.code, z.source_index, k);
    if parallel {
        query_codes.par_iter().map(run).collect()
    } else {
        query_codes.iter().map(run).collect()
    }
}

/// Brute-force: the `k` admissible keys nearest to `query` in Euclidean
/// distance, ties broken by position.
pub fn exact_topk_oracle(keys: &Matrix, query: &[f64], query_pos: usize, budget: SearchBudget) -> TopKSelection {
    let admissible = budget.admissible(query_pos).min(keys.rows());
    let mut scored: Vec<(f64, usize)> = (0..admissible)
        .map(|j| (squared_distance(query, keys.row(j)), j))
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let keep = budget.k.min(scored.len());
    if scored.len() > keep {
        scored.select_nth_unstable_by(keep, by_dist);
        scored.truncate(keep);
    }
    scored.sort_unstable_by(by_dist);
    TopKSelection::new(scored.into_iter().map(|(_, j)| j).collect())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `|approx ∩ exact| / |exact|`, or 1.0 when `exact` is empty.
pub fn recall_at_k(approx: &TopKSelection, exact: &TopKSelection) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let hits = exact
        .indices
        .iter()
        .filter(|j| approx.indices.contains(j))
        .count();
    hits as f64 / exact.len() as f64
}
