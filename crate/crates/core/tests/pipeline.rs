use proptest::prelude::*;

use zeta::cauchy_attention::{attend, attend_cached, select, AttendOptions, AttentionParams};
use zeta::morton::{default_bits, encode_batch, QuantizationConfig};
use zeta::numerics::{gaussian_matrix, Matrix, Rng};
use zeta::topk_index::{exact_topk_oracle, query_all, ChunkedIndex, SearchBudget};

fn sorted_dists(keys: &Matrix, q: f64, idx: &[usize]) -> Vec<f64> {
    let mut d: Vec<f64> = idx.iter().map(|&j| (keys[(j, 0)] - q).abs()).collect();
    d.sort_by(f64::total_cmp);
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // In one dimension code order is value order, so chunked search is exact
    // up to ties in distance.
    #[test]
    fn one_dim_search_matches_oracle(seed in 0u64..10_000, n in 1usize..160, m in 1usize..20, k in 1usize..12) {
        let mut rng = Rng::new(seed);
        let keys = gaussian_matrix(&mut rng, n, 1, 1.0).unwrap();
        let queries = gaussian_matrix(&mut rng, n, 1, 1.0).unwrap();
        let both = keys.vstack(&queries).unwrap();
        let cfg = QuantizationConfig::fit(&both, default_bits(1)).unwrap();
        let index = ChunkedIndex::build(&encode_batch(&keys, &cfg).unwrap(), m).unwrap();
        let sels = query_all(&index, &encode_batch(&queries, &cfg).unwrap(), k, false);
        let budget = SearchBudget::new(k, m).unwrap();
        for (i, sel) in sels.iter().enumerate() {
            let exact = exact_topk_oracle(&keys, queries.row(i), i, budget);
            let a = sorted_dists(&keys, queries[(i, 0)], &sel.indices);
            let b = sorted_dists(&keys, queries[(i, 0)], &exact.indices);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12, "pos {} got {:?} want {:?}", i, a, b);
            }
        }
    }

    #[test]
    fn selections_are_causal_and_complete(seed in 0u64..10_000, n in 1usize..120, d in 1usize..5, m in 1usize..16, k in 1usize..10) {
        let mut rng = Rng::new(seed);
        let q = gaussian_matrix(&mut rng, n, d, 1.0).unwrap();
        let keys = gaussian_matrix(&mut rng, n, d, 1.0).unwrap();
        let params = AttentionParams::new(d, 1, m, k).unwrap();
        let sels = select(&q, &keys, &params, &AttendOptions::default()).unwrap();
        for (i, s) in sels.iter().enumerate() {
            let limit = (i / m) * m;
            prop_assert_eq!(s.len(), k.min(limit));
            prop_assert!(s.indices.iter().all(|&j| j < limit));
            let mut u = s.indices.clone();
            u.sort_unstable();
            u.dedup();
            prop_assert_eq!(u.len(), s.len());
        }
    }

    #[test]
    fn outputs_stay_in_value_hull(seed in 0u64..10_000, n in 1usize..80, m in 1usize..8, k in 1usize..8) {
        let mut rng = Rng::new(seed);
        let q = gaussian_matrix(&mut rng, n, 2, 1.0).unwrap();
        let keys = gaussian_matrix(&mut rng, n, 2, 1.0).unwrap();
        let v = gaussian_matrix(&mut rng, n, 3, 1.0).unwrap();
        let params = AttentionParams::new(2, 3, m, k).unwrap();
        let out = attend(&q, &keys, &v, &params).unwrap();
        for c in 0..3 {
            let lo = (0..n).map(|t| v[(t, c)]).fold(f64::INFINITY, f64::min);
            let hi = (0..n).map(|t| v[(t, c)]).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..n {
                prop_assert!(out[(i, c)] >= lo - 1e-12 && out[(i, c)] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn first_chunk_attends_only_to_the_mean() {
    let mut rng = Rng::new(1);
    let q = gaussian_matrix(&mut rng, 12, 2, 1.0).unwrap();
    let k = gaussian_matrix(&mut rng, 12, 2, 1.0).unwrap();
    let v = gaussian_matrix(&mut rng, 12, 4, 1.0).unwrap();
    let params = AttentionParams::new(2, 4, 4, 3).unwrap();
    let (out, cache) = attend_cached(&q, &k, &v, &params, &AttendOptions::default()).unwrap();
    for i in 0..4 {
        assert!(cache.selections[i].is_empty());
        for c in 0..4 {
            assert!((out[(i, c)] - cache.value_mean[(i, c)]).abs() < 1e-15);
        }
    }
}

#[test]
fn parallel_pipeline_matches_sequential() {
    let mut rng = Rng::new(2);
    let q = gaussian_matrix(&mut rng, 500, 3, 1.0).unwrap();
    let k = gaussian_matrix(&mut rng, 500, 3, 1.0).unwrap();
    let v = gaussian_matrix(&mut rng, 500, 8, 1.0).unwrap();
    let params = AttentionParams::new(3, 8, 32, 16).unwrap();
    let (a, _) = attend_cached(&q, &k, &v, &params, &AttendOptions::default()).unwrap();
    let (b, _) = attend_cached(&q, &k, &v, &params, &AttendOptions { parallel: true, ..Default::default() }).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
}
