//! Sparse Adaptive Cauchy-Softmax attention with an analytic backward pass.
//!
//! For query `i` with selected keys `I_i` plus one history-mean slot:
//!
//! ```text
//! D_ij = ‖q_i − k_j‖²      δ_ij = D_ij + ε      ε = γ² = sigmoid(θ)
//! S_ij = 1 / δ_ij          Z_i  = Σ_j S_ij      A_ij = S_ij / Z_i
//! o_i  = Σ_j A_ij v_j
//! ```
//!
//! The mean slot uses `k̄_i` and `v̄_i`, the inclusive prefix means of the key
//! and value rows `0..=i`. No `1/√d_K` scaling is applied.

use rayon::prelude::*;

use crate::error::{param_err, shape_err, Result, ZetaError};
use crate::morton::{default_bits, encode_batch, QuantizationConfig};
use crate::numerics::{finite_diff_grad, relative_error, Matrix, DEFAULT_FD_STEP};
use crate::topk_index::{query_all, squared_distance, ChunkedIndex, SearchBudget, TopKSelection};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub d_k: usize,
    pub d_v: usize,
    /// Chunk size `M`.
    pub chunk_size: usize,
    /// Neighbors per query.
    pub k: usize,
    /// Quantization bits per key dimension.
    pub bits: usize,
    /// Trainable shape parameter, `γ² = sigmoid(theta)`.
    pub theta: f64,
}

impl AttentionParams {
    pub fn new(d_k: usize, d_v: usize, chunk_size: usize, k: usize) -> Result<Self> {
        let p = Self {
            d_k,
            d_v,
            chunk_size,
            k,
            bits: default_bits(d_k),
            theta: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_bits(mut self, bits: usize) -> Self {
        self.bits = bits;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_k == 0 || self.d_v == 0 {
            return param_err(format!("d_k and d_v must be >= 1, got {} and {}", self.d_k, self.d_v));
        }
        if self.d_k * self.bits > crate::morton::CODE_BITS || self.bits == 0 {
            return param_err(format!("{} bits x {} dims exceeds the code budget", self.bits, self.d_k));
        }
        if !self.theta.is_finite() {
            return param_err("theta must be finite");
        }
        SearchBudget::new(self.k, self.chunk_size).map(|_| ())
    }

    pub fn gamma_sq(&self) -> f64 {
        sigmoid(self.theta)
    }

    pub fn budget(&self) -> SearchBudget {
        SearchBudget {
            k: self.k,
            chunk_size: self.chunk_size,
        }
    }
}

/// Inclusive running means: row `i` is the mean of rows `0..=i`.
pub fn prefix_means(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut acc = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let inv = 1.0 / (i + 1) as f64;
        for (a, v) in acc.iter_mut().zip(x.row(i)) {
            *a += v;
        }
        for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = a * inv;
        }
    }
    out
}

/// Per-query quantities kept for the backward pass. Slot `s < indices.len()`
/// is key `indices[s]`; the last slot is the history mean.
#[derive(Clone, Debug)]
pub struct QueryCache {
    pub delta: Vec<f64>,
    pub weights: Vec<f64>,
    pub normalizer: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub key_mean: Matrix,
    pub value_mean: Matrix,
    pub selections: Vec<TopKSelection>,
    pub per_query: Vec<QueryCache>,
    pub output: Matrix,
    pub epsilon: f64,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.rows() == 0
    }

    fn slot_key(&self, i: usize, s: usize) -> &[f64] {
        match self.selections[i].indices.get(s) {
            Some(&j) => self.k.row(j),
            None => self.key_mean.row(i),
        }
    }

    fn slot_value(&self, i: usize, s: usize) -> &[f64] {
        match self.selections[i].indices.get(s) {
            Some(&j) => self.v.row(j),
            None => self.value_mean.row(i),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradBundle {
    pub d_q: Matrix,
    pub d_k: Matrix,
    pub d_v: Matrix,
    /// Gradient with respect to `ε = γ²`.
    pub d_epsilon: f64,
    pub d_theta: f64,
}

impl GradBundle {
    pub fn is_finite(&self) -> bool {
        self.d_q.is_finite() && self.d_k.is_finite() && self.d_v.is_finite() && self.d_theta.is_finite()
    }
}

fn check_inputs(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.rows() == 0 {
        return param_err("empty sequence");
    }
    if q.shape() != k.shape() {
        return shape_err(format!("Q is {:?} but K is {:?}", q.shape(), k.shape()));
    }
    if v.rows() != q.rows() {
        return shape_err(format!("V has {} rows, Q has {}", v.rows(), q.rows()));
    }
    Ok(())
}

/// Cauchy attention over fixed selections.
pub fn forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    selections: &[TopKSelection],
    params: &AttentionParams,
) -> Result<(Matrix, ForwardCache)> {
    forward_with(q, k, v, selections, params, false)
}

pub fn forward_with(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    selections: &[TopKSelection],
    params: &AttentionParams,
    parallel: bool,
) -> Result<(Matrix, ForwardCache)> {
    check_inputs(q, k, v)?;
    let n = q.rows();
    if selections.len() != n {
        return shape_err(format!("{} selections for {n} queries", selections.len()));
    }
    for (i, sel) in selections.iter().enumerate() {
        if let Some(&j) = sel.indices.iter().find(|&&j| j >= n) {
            return Err(ZetaError::Index(format!("query {i} selects key {j} of {n}")));
        }
    }
    let eps = params.gamma_sq();
    let key_mean = prefix_means(k);
    let value_mean = prefix_means(v);
    let d_v = v.cols();

    let one_query = |i: usize| -> (QueryCache, Vec<f64>) {
        let qi = q.row(i);
        let sel = &selections[i].indices;
        let slots = sel.len() + 1;
        let mut delta = Vec::with_capacity(slots);
        for &j in sel {
            delta.push(squared_distance(qi, k.row(j)) + eps);
        }
        delta.push(squared_distance(qi, key_mean.row(i)) + eps);
        let normalizer: f64 = delta.iter().map(|d| 1.0 / d).sum();
        let weights: Vec<f64> = delta.iter().map(|d| 1.0 / d / normalizer).collect();
        let mut out = vec![0.0; d_v];
        for (s, &w) in weights.iter().enumerate() {
            let value = sel.get(s).map_or(value_mean.row(i), |&j| v.row(j));
            for (o, x) in out.iter_mut().zip(value) {
                *o += w * x;
            }
        }
        (
            QueryCache {
                delta,
                weights,
                normalizer,
            },
            out,
        )
    };
    let results: Vec<(QueryCache, Vec<f64>)> = if parallel {
        (0..n).into_par_iter().map(one_query).collect()
    } else {
        (0..n).map(one_query).collect()
    };

    let mut output = Matrix::zeros(n, d_v);
    let mut per_query = Vec::with_capacity(n);
    for (i, (qc, row)) in results.into_iter().enumerate() {
        output.row_mut(i).copy_from_slice(&row);
        per_query.push(qc);
    }
    let cache = ForwardCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        key_mean,
        value_mean,
        selections: selections.to_vec(),
        per_query,
        output: output.clone(),
        epsilon: eps,
    };
    Ok((output, cache))
}

struct QueryGrad {
    d_q: Vec<f64>,
    /// `(dk, dv)` for every slot, mean slot last.
    slots: Vec<(Vec<f64>, Vec<f64>)>,
    d_epsilon: f64,
}

fn query_backward(cache: &ForwardCache, d_out: &Matrix, i: usize) -> QueryGrad {
    let qc = &cache.per_query[i];
    let qi = cache.q.row(i);
    let oi = cache.output.row(i);
    let g = d_out.row(i);
    let d_k = qi.len();
    let mut d_q = vec![0.0; d_k];
    let mut d_epsilon = 0.0;
    let mut slots = Vec::with_capacity(qc.weights.len());
    for (s, (&a, &delta)) in qc.weights.iter().zip(&qc.delta).enumerate() {
        let key = cache.slot_key(i, s);
        let value = cache.slot_value(i, s);
        // ∂L/∂S = g·(v − o) / Z, then ∂L/∂δ = −∂L/∂S / δ²
        let g_dot: f64 = g.iter().zip(value.iter().zip(oi)).map(|(gi, (vj, o))| gi * (vj - o)).sum();
        let d_delta = -(g_dot / qc.normalizer) / (delta * delta);
        d_epsilon += d_delta;
        let mut dk = vec![0.0; d_k];
        for t in 0..d_k {
            let diff = 2.0 * (qi[t] - key[t]) * d_delta;
            d_q[t] += diff;
            dk[t] = -diff;
        }
        let dv = g.iter().map(|x| a * x).collect();
        slots.push((dk, dv));
    }
    QueryGrad {
        d_q,
        slots,
        d_epsilon,
    }
}

pub fn backward(cache: &ForwardCache, d_out: &Matrix, params: &AttentionParams) -> Result<GradBundle> {
    backward_with(cache, d_out, params, false)
}

/// Analytic gradients of the loss given `d_out = ∂L/∂O`.
///
/// Gradients reaching the mean slot are spread over rows `0..=i` with weight
/// `1/(i+1)`. Reduction order is fixed, so the parallel and sequential paths
/// give identical bits.
pub fn backward_with(
    cache: &ForwardCache,
    d_out: &Matrix,
    params: &AttentionParams,
    parallel: bool,
) -> Result<GradBundle> {
    if d_out.shape() != cache.output.shape() {
        return shape_err(format!(
            "upstream gradient {:?} does not match output {:?}",
            d_out.shape(),
            cache.output.shape()
        ));
    }
    let n = cache.len();
    let per_query: Vec<QueryGrad> = if parallel {
        (0..n).into_par_iter().map(|i| query_backward(cache, d_out, i)).collect()
    } else {
        (0..n).map(|i| query_backward(cache, d_out, i)).collect()
    };

    let mut d_q = Matrix::zeros(n, cache.q.cols());
    let mut d_k = Matrix::zeros(n, cache.k.cols());
    let mut d_v = Matrix::zeros(n, cache.v.cols());
    let mut d_key_mean = Matrix::zeros(n, cache.k.cols());
    let mut d_value_mean = Matrix::zeros(n, cache.v.cols());
    let mut d_epsilon = 0.0;
    for (i, qg) in per_query.into_iter().enumerate() {
        d_q.row_mut(i).copy_from_slice(&qg.d_q);
        d_epsilon += qg.d_epsilon;
        let sel = &cache.selections[i].indices;
        for (s, (dk, dv)) in qg.slots.into_iter().enumerate() {
            let (krow, vrow) = match sel.get(s) {
                Some(&j) => (d_k.row_mut(j), d_v.row_mut(j)),
                None => (d_key_mean.row_mut(i), d_value_mean.row_mut(i)),
            };
            krow.iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
            vrow.iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
        }
    }
    spread_prefix_mean_grad(&d_key_mean, &mut d_k);
    spread_prefix_mean_grad(&d_value_mean, &mut d_v);

    let s = params.gamma_sq();
    Ok(GradBundle {
        d_q,
        d_k,
        d_v,
        d_epsilon,
        d_theta: d_epsilon * s * (1.0 - s),
    })
}

/// Backpropagates through [`prefix_means`]: row `t` receives
/// `Σ_{i ≥ t} grad_i / (i + 1)`.
fn spread_prefix_mean_grad(grad_mean: &Matrix, target: &mut Matrix) {
    let cols = grad_mean.cols();
    let mut suffix = vec![0.0; cols];
    for i in (0..grad_mean.rows()).rev() {
        let inv = 1.0 / (i + 1) as f64;
        for (acc, g) in suffix.iter_mut().zip(grad_mean.row(i)) {
            *acc += g * inv;
        }
        for (t, acc) in target.row_mut(i).iter_mut().zip(&suffix) {
            *t += acc;
        }
    }
}

/// Knobs for the full retrieval + attention pipeline.
#[derive(Clone, Debug, Default)]
pub struct AttendOptions {
    /// Fixed quantization bounds. `None` fits them to the keys and queries.
    pub quantization: Option<QuantizationConfig>,
    pub parallel: bool,
}

/// Morton-encodes queries and keys, builds the chunked index and retrieves
/// the top-k selection of every query.
pub fn select(
    q: &Matrix,
    k: &Matrix,
    params: &AttentionParams,
    opts: &AttendOptions,
) -> Result<Vec<TopKSelection>> {
    if q.shape() != k.shape() {
        return shape_err(format!("Q is {:?} but K is {:?}", q.shape(), k.shape()));
    }
    params.validate()?;
    let fitted;
    let cfg = match &opts.quantization {
        Some(cfg) => cfg,
        None => {
            fitted = QuantizationConfig::fit(&q.vstack(k)?, params.bits)?;
            &fitted
        }
    };
    let key_codes = encode_batch(k, cfg)?;
    let query_codes = encode_batch(q, cfg)?;
    let index = ChunkedIndex::build(&key_codes, params.chunk_size)?;
    Ok(query_all(&index, &query_codes, params.k, opts.parallel))
}

/// Full pipeline returning the cache needed for [`backward`].
pub fn attend_cached(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    params: &AttentionParams,
    opts: &AttendOptions,
) -> Result<(Matrix, ForwardCache)> {
    check_inputs(q, k, v)?;
    let selections = select(q, k, params, opts)?;
    forward_with(q, k, v, &selections, params, opts.parallel)
}

/// Encode, index, retrieve and attend.
pub fn attend(q: &Matrix, k: &Matrix, v: &Matrix, params: &AttentionParams) -> Result<Matrix> {
    attend_cached(q, k, v, params, &AttendOptions::default()).map(|(o, _)| o)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_q: f64,
    pub max_rel_k: f64,
    pub max_rel_v: f64,
    pub rel_theta: f64,
    pub entries: usize,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_q
            .max(self.max_rel_k)
            .max(self.max_rel_v)
            .max(self.rel_theta)
    }
}

/// Relative error floor: with `rtol = 1e-5` this is an absolute floor of 1e-8.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Compares [`backward`] against central differences of `L = Σ o²`, holding
/// the retrieved selections fixed.
pub fn gradient_check(q: &Matrix, k: &Matrix, v: &Matrix, params: &AttentionParams) -> Result<GradCheckReport> {
    let selections = select(q, k, params, &AttendOptions::default())?;
    let (out, cache) = forward(q, k, v, &selections, params)?;
    let mut d_out = out.clone();
    d_out.scale(2.0);
    let grads = backward(&cache, &d_out, params)?;

    let (nq, nk, nv) = (q.as_slice().len(), k.as_slice().len(), v.as_slice().len());
    let mut flat = Vec::with_capacity(nq + nk + nv + 1);
    flat.extend_from_slice(q.as_slice());
    flat.extend_from_slice(k.as_slice());
    flat.extend_from_slice(v.as_slice());
    flat.push(params.theta);

    let loss = |p: &[f64]| -> f64 {
        let qm = Matrix::from_vec(q.rows(), q.cols(), p[..nq].to_vec()).expect("shape");
        let km = Matrix::from_vec(k.rows(), k.cols(), p[nq..nq + nk].to_vec()).expect("shape");
        let vm = Matrix::from_vec(v.rows(), v.cols(), p[nq + nk..nq + nk + nv].to_vec()).expect("shape");
        let pp = params.clone().with_theta(p[nq + nk + nv]);
        match forward(&qm, &km, &vm, &selections, &pp) {
            Ok((o, _)) => o.as_slice().iter().map(|x| x * x).sum(),
            Err(_) => f64::NAN,
        }
    };
    let numeric = finite_diff_grad(loss, &flat, DEFAULT_FD_STEP)?;
    let max_rel = |analytic: &[f64], numeric: &[f64]| {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| relative_error(*a, *n, GRADCHECK_FLOOR))
            .fold(0.0, f64::max)
    };
    Ok(GradCheckReport {
        max_rel_q: max_rel(grads.d_q.as_slice(), &numeric[..nq]),
        max_rel_k: max_rel(grads.d_k.as_slice(), &numeric[nq..nq + nk]),
        max_rel_v: max_rel(grads.d_v.as_slice(), &numeric[nq + nk..nq + nk + nv]),
        rel_theta: relative_error(grads.d_theta, numeric[nq + nk + nv], GRADCHECK_FLOOR),
        entries: flat.len(),
    })
}
