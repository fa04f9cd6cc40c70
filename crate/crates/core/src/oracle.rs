//! Dense O(N²) reference attention and the Euclidean vs dot-product demo.

use std::fmt;

use crate::cauchy_attention::{prefix_means, AttentionParams};
use crate::error::{param_err, shape_err, Result};
use crate::numerics::Matrix;
use crate::topk_index::squared_distance;

/// Stabilizer for [`SoftmaxVariant::InverseEuclidean`].
pub const INVERSE_EUCLIDEAN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxVariant {
    /// `1 / (D + γ²)`
    Cauchy,
    /// `exp(−D)`
    NegativeEuclideanExp,
    /// `1 / (√D + 1e-6)`
    InverseEuclidean,
    /// `exp(q·k / √d_K)`
    DotProduct,
}

impl SoftmaxVariant {
    pub const ALL: [SoftmaxVariant; 4] = [
        SoftmaxVariant::Cauchy,
        SoftmaxVariant::NegativeEuclideanExp,
        SoftmaxVariant::InverseEuclidean,
        SoftmaxVariant::DotProduct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SoftmaxVariant::Cauchy => "cauchy",
            SoftmaxVariant::NegativeEuclideanExp => "negative_euclidean_exp",
            SoftmaxVariant::InverseEuclidean => "inverse_euclidean",
            SoftmaxVariant::DotProduct => "dot_product",
        }
    }
}

impl std::str::FromStr for SoftmaxVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown softmax variant '{s}'"))
    }
}

/// Unnormalized weights for the dense scan. Exponential variants are shifted
/// by their maximum exponent before `exp`.
fn slot_weights(variant: SoftmaxVariant, q: &[f64], keys: &[&[f64]], eps: f64) -> Vec<f64> {
    match variant {
        SoftmaxVariant::Cauchy => keys.iter().map(|k| 1.0 / (squared_distance(q, k) + eps)).collect(),
        SoftmaxVariant::InverseEuclidean => keys
            .iter()
            .map(|k| 1.0 / (squared_distance(q, k).sqrt() + INVERSE_EUCLIDEAN_EPS))
            .collect(),
        SoftmaxVariant::NegativeEuclideanExp | SoftmaxVariant::DotProduct => {
            let scale = 1.0 / (q.len() as f64).sqrt();
            let logits: Vec<f64> = keys
                .iter()
                .map(|k| match variant {
                    SoftmaxVariant::DotProduct => q.iter().zip(*k).map(|(a, b)| a * b).sum::<f64>() * scale,
                    _ => -squared_distance(q, k),
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            logits.iter().map(|l| (l - max).exp()).collect()
        }
    }
}

/// Query `i` attends every key `j < i` plus the history-mean slot.
pub fn dense_causal_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    variant: SoftmaxVariant,
    params: &AttentionParams,
) -> Result<Matrix> {
    let n = q.rows();
    if n == 0 {
        return param_err("empty sequence");
    }
    if q.shape() != k.shape() || v.rows() != n {
        return shape_err(format!("Q {:?}, K {:?}, V {:?}", q.shape(), k.shape(), v.shape()));
    }
    let eps = params.gamma_sq();
    let key_mean = prefix_means(k);
    let value_mean = prefix_means(v);
    let mut out = Matrix::zeros(n, v.cols());
    let mut keys: Vec<&[f64]> = Vec::with_capacity(n + 1);
    for i in 0..n {
        keys.clear();
        keys.extend((0..i).map(|j| k.row(j)));
        keys.push(key_mean.row(i));
        let w = slot_weights(variant, q.row(i), &keys, eps);
        let z: f64 = w.iter().sum();
        let row = out.row_mut(i);
        for (s, ws) in w.iter().enumerate() {
            let value = if s < i { v.row(s) } else { value_mean.row(i) };
            let a = ws / z;
            for (o, x) in row.iter_mut().zip(value) {
                *o += a * x;
            }
        }
    }
    Ok(out)
}

/// Z-score normalization of each column (population standard deviation).
/// Constant columns are centered but not scaled.
pub fn zscore(data: &Matrix) -> Matrix {
    let (n, d) = data.shape();
    let mut out = data.clone();
    for c in 0..d {
        let mean = (0..n).map(|r| data[(r, c)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (data[(r, c)] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in 0..n {
            out[(r, c)] = (data[(r, c)] - mean) / sd;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub euclidean: f64,
    pub dot: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub labels: Vec<String>,
    pub rows: Vec<MetricRow>,
    pub nearest_euclidean: usize,
    pub max_dot: usize,
}

impl fmt::Display for MetricTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "candidate,euclidean_distance,dot_product")?;
        for (label, row) in self.labels.iter().zip(&self.rows) {
            writeln!(f, "{label},{:.3},{:.6}", row.euclidean, row.dot)?;
        }
        writeln!(f, "euclidean_nearest={}", self.labels[self.nearest_euclidean])?;
        write!(f, "max_dot={}", self.labels[self.max_dot])
    }
}

/// Euclidean distance and dot product from `query` to each candidate.
pub fn metric_demo(query: &[f64], candidates: &[&[f64]]) -> Result<MetricTable> {
    if candidates.is_empty() {
        return param_err("no candidates");
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != query.len()) {
        return shape_err(format!("candidate of length {} vs query of length {}", c.len(), query.len()));
    }
    let rows: Vec<MetricRow> = candidates
        .iter()
        .map(|c| MetricRow {
            euclidean: squared_distance(query, c).sqrt(),
            dot: query.iter().zip(*c).map(|(a, b)| a * b).sum(),
        })
        .collect();
    let argbest = |key: &dyn Fn(&MetricRow) -> f64| {
        (0..rows.len())
            .max_by(|&a, &b| key(&rows[a]).total_cmp(&key(&rows[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    };
    let nearest_euclidean = argbest(&|r| -r.euclidean);
    let max_dot = argbest(&|r| r.dot);
    Ok(MetricTable {
        labels: (0..rows.len()).map(|i| format!("candidate_{i}")).collect(),
        rows,
        nearest_euclidean,
        max_dot,
    })
}

/// Size (sq ft), bedrooms, bathrooms, miles to the city center, age (years).
pub const HOUSES: [(&str, [f64; 5]); 4] = [
    ("House A", [1500.0, 3.0, 2.0, 10.0, 20.0]),
    ("House B", [1600.0, 3.0, 2.0, 8.0, 18.0]),
    ("House C", [3000.0, 5.0, 4.0, 5.0, 5.0]),
    ("House D", [900.0, 2.0, 1.0, 12.0, 25.0]),
];

/// Z-scores the four houses over themselves and compares House A to B, C, D.
pub fn house_example() -> MetricTable {
    let raw = Matrix::from_rows(&HOUSES.map(|(_, x)| x)).expect("fixed table");
    let z = zscore(&raw);
    let candidates: Vec<&[f64]> = (1..4).map(|i| z.row(i)).collect();
    let mut table = metric_demo(z.row(0), &candidates).expect("fixed table");
    table.labels = HOUSES[1..].iter().map(|(name, _)| name.to_string()).collect();
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_matrix, Rng};

    #[test]
    fn first_row_is_first_value() {
        let mut rng = Rng::new(1);
        let q = gaussian_matrix(&mut rng, 5, 2, 1.0).unwrap();
        let k = gaussian_matrix(&mut rng, 5, 2, 1.0).unwrap();
        let v = gaussian_matrix(&mut rng, 5, 3, 1.0).unwrap();
        let params = AttentionParams::new(2, 3, 1, 5).unwrap();
        for variant in SoftmaxVariant::ALL {
            let out = dense_causal_attention(&q, &k, &v, variant, &params).unwrap();
            assert_eq!(out.row(0), v.row(0), "{}", variant.name());
        }
    }

    #[test]
    fn dot_product_is_uniform_on_orthogonal_keys() {
        // query orthogonal to every key: all logits 0, including the mean slot
        let q = Matrix::from_rows(&[[0.0, 0.0, 1.0]; 4]).unwrap();
        let k = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]).unwrap();
        let v = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]).unwrap();
        let params = AttentionParams::new(3, 1, 1, 4).unwrap();
        let out = dense_causal_attention(&q, &k, &v, SoftmaxVariant::DotProduct, &params).unwrap();
        // query 3: slots v0,v1,v2 and mean 2.5, each weight 1/4
        assert!((out[(3, 0)] - (1.0 + 2.0 + 3.0 + 2.5) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariant_in_history() {
        let mut rng = Rng::new(4);
        let q = gaussian_matrix(&mut rng, 6, 2, 1.0).unwrap();
        let k = gaussian_matrix(&mut rng, 6, 2, 1.0).unwrap();
        let v = gaussian_matrix(&mut rng, 6, 2, 1.0).unwrap();
        let params = AttentionParams::new(2, 2, 1, 6).unwrap();
        let base = dense_causal_attention(&q, &k, &v, SoftmaxVariant::Cauchy, &params).unwrap();
        let perm = [3usize, 0, 4, 1, 2, 5];
        let pk = Matrix::from_rows(&perm.map(|p| k.row(p).to_vec())).unwrap();
        let pv = Matrix::from_rows(&perm.map(|p| v.row(p).to_vec())).unwrap();
        let moved = dense_causal_attention(&q, &pk, &pv, SoftmaxVariant::Cauchy, &params).unwrap();
        assert!((base[(5, 0)] - moved[(5, 0)]).abs() < 1e-12);
        assert!((base[(5, 1)] - moved[(5, 1)]).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_rejected() {
        let params = AttentionParams::new(2, 2, 1, 1).unwrap();
        let e = Matrix::zeros(0, 2);
        assert!(dense_causal_attention(&e, &e, &e, SoftmaxVariant::Cauchy, &params).is_err());
    }

    #[test]
    fn metric_basics() {
        let t = metric_demo(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(t.rows[0].euclidean, 0.0);
        assert_eq!(t.rows[1].dot, 0.0);
        assert!((t.rows[1].euclidean - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.nearest_euclidean, 0);
    }

    #[test]
    fn house_outcome() {
        let t = house_example();
        assert_eq!(t.labels[t.nearest_euclidean], "House B");
        assert_eq!(t.labels[t.max_dot], "House D");
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in SoftmaxVariant::ALL {
            assert_eq!(v.name().parse::<SoftmaxVariant>().unwrap(), v);
        }
        assert!("softplus".parse::<SoftmaxVariant>().is_err());
    }
}
