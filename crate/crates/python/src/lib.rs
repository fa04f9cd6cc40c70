//! Python bindings. Matrices cross the boundary as lists of row lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use zeta::cauchy_attention::{self as attn, AttendOptions};
use zeta::locality_eval::{self, KAblationConfig, LocalitySweepConfig};
use zeta::morton::{self, QuantizationConfig};
use zeta::numerics::{Matrix, Rng};
use zeta::oracle::{self, SoftmaxVariant};
use zeta::toy_train::{self, ModelConfig, ModelParams, TaskConfig};
use zeta::ZetaError;

fn to_py(e: ZetaError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

#[pyclass(name = "AttentionParams", from_py_object)]
#[derive(Clone)]
struct PyAttentionParams {
    inner: attn::AttentionParams,
}

#[pymethods]
impl PyAttentionParams {
    #[new]
    #[pyo3(signature = (d_k, d_v, chunk_size, k, theta = 0.0, bits = None))]
    fn new(d_k: usize, d_v: usize, chunk_size: usize, k: usize, theta: f64, bits: Option<usize>) -> PyResult<Self> {
        let mut inner = attn::AttentionParams::new(d_k, d_v, chunk_size, k)
            .map_err(to_py)?
            .with_theta(theta);
        if let Some(b) = bits {
            inner = inner.with_bits(b);
        }
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn d_k(&self) -> usize {
        self.inner.d_k
    }

    #[getter]
    fn d_v(&self) -> usize {
        self.inner.d_v
    }

    #[getter]
    fn chunk_size(&self) -> usize {
        self.inner.chunk_size
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn bits(&self) -> usize {
        self.inner.bits
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    fn gamma_sq(&self) -> f64 {
        self.inner.gamma_sq()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "AttentionParams(d_k={}, d_v={}, chunk_size={}, k={}, theta={}, bits={})",
            p.d_k, p.d_v, p.chunk_size, p.k, p.theta, p.bits
        )
    }
}

#[pyfunction]
fn interleave(grid: Vec<u64>, bits_per_dim: usize) -> PyResult<u64> {
    morton::interleave(&grid, bits_per_dim).map_err(to_py)
}

#[pyfunction]
fn deinterleave(code: u64, dims: usize, bits_per_dim: usize) -> PyResult<Vec<u64>> {
    morton::deinterleave(code, dims, bits_per_dim).map_err(to_py)
}

/// `(code, source_index)` per row, with bounds fitted to `points`.
#[pyfunction]
#[pyo3(signature = (points, bits_per_dim = None))]
fn encode_batch(points: Vec<Vec<f64>>, bits_per_dim: Option<usize>) -> PyResult<Vec<(u64, usize)>> {
    let m = matrix(points)?;
    let bits = bits_per_dim.unwrap_or_else(|| morton::default_bits(m.cols()));
    let cfg = QuantizationConfig::fit(&m, bits).map_err(to_py)?;
    Ok(morton::encode_batch(&m, &cfg)
        .map_err(to_py)?
        .into_iter()
        .map(|z| (z.code, z.source_index))
        .collect())
}

/// Attended key positions for every query (the mean slot is implicit).
#[pyfunction]
fn topk_select(q: Vec<Vec<f64>>, k: Vec<Vec<f64>>, params: PyAttentionParams) -> PyResult<Vec<Vec<usize>>> {
    let sels = attn::select(&matrix(q)?, &matrix(k)?, &params.inner, &AttendOptions::default()).map_err(to_py)?;
    Ok(sels.into_iter().map(|s| s.indices).collect())
}

#[pyfunction]
fn attend(q: Vec<Vec<f64>>, k: Vec<Vec<f64>>, v: Vec<Vec<f64>>, params: PyAttentionParams) -> PyResult<Vec<Vec<f64>>> {
    let out = attn::attend(&matrix(q)?, &matrix(k)?, &matrix(v)?, &params.inner).map_err(to_py)?;
    Ok(rows(&out))
}

/// Returns `(output, dQ, dK, dV, dtheta)` for upstream gradient `d_out`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn attend_backward(
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    d_out: Vec<Vec<f64>>,
    params: PyAttentionParams,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    let (out, cache) = attn::attend_cached(&matrix(q)?, &matrix(k)?, &matrix(v)?, &params.inner, &AttendOptions::default())
        .map_err(to_py)?;
    let g = attn::backward(&cache, &matrix(d_out)?, &params.inner).map_err(to_py)?;
    Ok((rows(&out), rows(&g.d_q), rows(&g.d_k), rows(&g.d_v), g.d_theta))
}

#[pyfunction]
#[pyo3(signature = (q, k, v, params, variant = "cauchy"))]
fn dense_causal_attention(
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    params: PyAttentionParams,
    variant: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let variant: SoftmaxVariant = variant.parse().map_err(PyValueError::new_err)?;
    let out = oracle::dense_causal_attention(&matrix(q)?, &matrix(k)?, &matrix(v)?, variant, &params.inner)
        .map_err(to_py)?;
    Ok(rows(&out))
}

/// Largest relative error of the analytic gradients.
#[pyfunction]
fn gradient_check(q: Vec<Vec<f64>>, k: Vec<Vec<f64>>, v: Vec<Vec<f64>>, params: PyAttentionParams) -> PyResult<f64> {
    attn::gradient_check(&matrix(q)?, &matrix(k)?, &matrix(v)?, &params.inner)
        .map(|r| r.max_rel())
        .map_err(to_py)
}

/// `(rows, euclidean_nearest, max_dot)`, rows as `(label, distance, dot)`.
#[pyfunction]
fn house_example() -> (Vec<(String, f64, f64)>, String, String) {
    let t = oracle::house_example();
    let table = t
        .labels
        .iter()
        .zip(&t.rows)
        .map(|(l, r)| (l.clone(), r.euclidean, r.dot))
        .collect();
    (table, t.labels[t.nearest_euclidean].clone(), t.labels[t.max_dot].clone())
}

#[pyfunction]
#[pyo3(signature = (dims, sizes, neighbors = 64, trials = 10, seed = 0))]
fn locality_sweep(
    dims: Vec<usize>,
    sizes: Vec<usize>,
    neighbors: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Vec<(usize, usize, usize, f64)>> {
    let cfg = LocalitySweepConfig {
        dims,
        sizes,
        neighbors,
        trials,
        seed,
        bits: None,
    };
    Ok(locality_eval::locality_sweep(&cfg)
        .map_err(to_py)?
        .into_iter()
        .map(|r| (r.d_k, r.n, r.trial, r.mean_overlap))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (n = 512, d_k = 3, chunk_size = 32, ks = vec![16, 24, 32, 40, 48], trials = 10, seed = 0))]
fn k_ablation(n: usize, d_k: usize, chunk_size: usize, ks: Vec<usize>, trials: usize, seed: u64) -> PyResult<Vec<(usize, f64)>> {
    let cfg = KAblationConfig {
        n,
        d_k,
        chunk_size,
        ks,
        trials,
        seed,
        bits: None,
    };
    locality_eval::k_ablation(&cfg).map_err(to_py)
}

/// Trains the default one-layer MQAR model; returns `(loss_trace, accuracy)`.
#[pyfunction]
#[pyo3(signature = (steps = 500, lr = 0.01, seed = 0))]
fn train_mqar(py: Python<'_>, steps: usize, lr: f64, seed: u64) -> PyResult<(Vec<f64>, f64)> {
    py.detach(|| {
        let mut rng = Rng::new(seed);
        let task = TaskConfig::default();
        let mut model = ModelParams::init(&mut rng, &ModelConfig::default())?;
        let train_set = task.generate(&mut rng, task.train_instances)?;
        let eval_set = task.generate(&mut rng, task.eval_instances)?;
        let trace = toy_train::train(&mut model, &train_set, steps, lr)?;
        let acc = toy_train::eval_accuracy(&model, &eval_set)?;
        Ok((trace, acc))
    })
    .map_err(to_py)
}

#[pymodule]
pub fn zeta_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAttentionParams>()?;
    m.add_function(wrap_pyfunction!(interleave, m)?)?;
    m.add_function(wrap_pyfunction!(deinterleave, m)?)?;
    m.add_function(wrap_pyfunction!(encode_batch, m)?)?;
    m.add_function(wrap_pyfunction!(topk_select, m)?)?;
    m.add_function(wrap_pyfunction!(attend, m)?)?;
    m.add_function(wrap_pyfunction!(attend_backward, m)?)?;
    m.add_function(wrap_pyfunction!(dense_causal_attention, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(house_example, m)?)?;
    m.add_function(wrap_pyfunction!(locality_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(k_ablation, m)?)?;
    m.add_function(wrap_pyfunction!(train_mqar, m)?)?;
    Ok(())
}
