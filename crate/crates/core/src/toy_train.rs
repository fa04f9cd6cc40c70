//! Multi-query associative recall (MQAR) with a one-layer ZETA model.
//!
//! Sequences are `k1 v1 k2 v2 … kn vn` followed by probe keys; the target at
//! each probe is the value that followed that key. Keys and values come from
//! disjoint halves of the vocabulary. The model is
//!
//! ```text
//! x_t = E[tok_t] + S[tok_{t−1}]
//! Q = X W_q,  K = X W_k,  V = X W_v,  Y = ZETA(Q, K, V) W_out
//! ```
//!
//! trained with squared error between `Y` at probe rows and the target's
//! token embedding. `E` and `S` are fixed random tables; `S` gives every
//! position a view of its predecessor so that a value position can be found
//! by the key that precedes it. Readouts decode to the nearest row of `E`.

use rayon::prelude::*;

use crate::cauchy_attention::{backward, forward, select, AttendOptions, AttentionParams, ForwardCache};
use crate::error::{param_err, shape_err, Result, ZetaError};
use crate::morton::QuantizationConfig;
use crate::numerics::{finite_diff_grad, gaussian_matrix, matmul, relative_error, AdamState, Matrix, Rng, DEFAULT_FD_STEP};
use crate::topk_index::TopKSelection;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MqarInstance {
    pub tokens: Vec<usize>,
    pub probe_positions: Vec<usize>,
    pub targets: Vec<usize>,
}

impl MqarInstance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Distinct keys from the lower half of the vocabulary, values from the upper
/// half, then probes drawn from those keys.
pub fn generate_mqar(rng: &mut Rng, vocab: usize, n_pairs: usize, seq_len: usize) -> Result<MqarInstance> {
    let half = vocab / 2;
    if n_pairs == 0 || n_pairs > half {
        return param_err(format!("need 1..={half} distinct keys, got {n_pairs}"));
    }
    if seq_len < 2 * n_pairs + 1 {
        return param_err(format!("sequence of {seq_len} cannot hold {n_pairs} pairs and a probe"));
    }
    let mut keys: Vec<usize> = (0..half).collect();
    rng.shuffle(&mut keys);
    keys.truncate(n_pairs);
    let values: Vec<usize> = (0..n_pairs).map(|_| half + rng.below(vocab - half)).collect();
    let mut tokens = Vec::with_capacity(seq_len);
    for (&k, &v) in keys.iter().zip(&values) {
        tokens.push(k);
        tokens.push(v);
    }
    let mut probe_positions = Vec::new();
    let mut targets = Vec::new();
    for pos in 2 * n_pairs..seq_len {
        let pair = rng.below(n_pairs);
        tokens.push(keys[pair]);
        probe_positions.push(pos);
        targets.push(values[pair]);
    }
    Ok(MqarInstance {
        tokens,
        probe_positions,
        targets,
    })
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub chunk_size: usize,
    pub k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab: 16,
            d_model: 64,
            d_k: 3,
            d_v: 64,
            chunk_size: 8,
            k: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub token_embedding: Matrix,
    pub shift_embedding: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_out: Matrix,
    pub attention: AttentionParams,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ModelTrace {
    pub inputs: Matrix,
    pub attention_out: Matrix,
    pub readout: Matrix,
    pub cache: ForwardCache,
}

#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_out: Matrix,
    pub theta: f64,
}

impl ModelGrads {
    fn zeros_like(m: &ModelParams) -> Self {
        Self {
            w_q: Matrix::zeros(m.w_q.rows(), m.w_q.cols()),
            w_k: Matrix::zeros(m.w_k.rows(), m.w_k.cols()),
            w_v: Matrix::zeros(m.w_v.rows(), m.w_v.cols()),
            w_out: Matrix::zeros(m.w_out.rows(), m.w_out.cols()),
            theta: 0.0,
        }
    }

    fn accumulate(&mut self, other: &ModelGrads) -> Result<()> {
        self.w_q.add_assign(&other.w_q)?;
        self.w_k.add_assign(&other.w_k)?;
        self.w_v.add_assign(&other.w_v)?;
        self.w_out.add_assign(&other.w_out)?;
        self.theta += other.theta;
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_out] {
            v.extend_from_slice(m.as_slice());
        }
        v.push(self.theta);
        v
    }
}

impl ModelParams {
    pub fn init(rng: &mut Rng, cfg: &ModelConfig) -> Result<Self> {
        let attention = AttentionParams::new(cfg.d_k, cfg.d_v, cfg.chunk_size, cfg.k)?;
        let emb_std = 1.0 / (cfg.d_model as f64).sqrt();
        Ok(Self {
            token_embedding: gaussian_matrix(rng, cfg.vocab, cfg.d_model, emb_std)?,
            shift_embedding: gaussian_matrix(rng, cfg.vocab, cfg.d_model, emb_std)?,
            w_q: gaussian_matrix(rng, cfg.d_model, cfg.d_k, emb_std)?,
            w_k: gaussian_matrix(rng, cfg.d_model, cfg.d_k, emb_std)?,
            w_v: gaussian_matrix(rng, cfg.d_model, cfg.d_v, emb_std)?,
            w_out: gaussian_matrix(rng, cfg.d_v, cfg.d_model, 1.0 / (cfg.d_v as f64).sqrt())?,
            attention,
        })
    }

    pub fn vocab(&self) -> usize {
        self.token_embedding.rows()
    }

    pub fn num_trainable(&self) -> usize {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_out]
            .iter()
            .map(|m| m.as_slice().len())
            .sum::<usize>()
            + 1
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_trainable());
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_out] {
            v.extend_from_slice(m.as_slice());
        }
        v.push(self.attention.theta);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_trainable() {
            return shape_err(format!("{} values for {} parameters", flat.len(), self.num_trainable()));
        }
        let mut offset = 0;
        for m in [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_out] {
            let len = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        self.attention.theta = flat[offset];
        Ok(())
    }

    /// `x_t = E[tok_t] + S[tok_{t−1}]`.
    pub fn embed(&self, tokens: &[usize]) -> Result<Matrix> {
        let d = self.token_embedding.cols();
        let mut x = Matrix::zeros(tokens.len(), d);
        for (t, &tok) in tokens.iter().enumerate() {
            if tok >= self.vocab() {
                return Err(ZetaError::Index(format!("token {tok} outside vocab {}", self.vocab())));
            }
            let row = x.row_mut(t);
            row.copy_from_slice(self.token_embedding.row(tok));
            if t > 0 {
                for (r, s) in row.iter_mut().zip(self.shift_embedding.row(tokens[t - 1])) {
                    *r += s;
                }
            }
        }
        Ok(x)
    }

    /// Quantization bounds covering every embeddable input under the current
    /// projections. They depend only on parameters, never on the sequence, so
    /// a position's retrieval cannot see later tokens.
    pub fn quantization(&self) -> Result<QuantizationConfig> {
        let d_k = self.attention.d_k;
        let mut lo = vec![f64::INFINITY; d_k];
        let mut hi = vec![f64::NEG_INFINITY; d_k];
        for w in [&self.w_q, &self.w_k] {
            let tok = matmul(&self.token_embedding, w)?;
            let shift = matmul(&self.shift_embedding, w)?;
            for j in 0..d_k {
                let tcol: Vec<f64> = (0..tok.rows()).map(|r| tok[(r, j)]).collect();
                let scol: Vec<f64> = (0..shift.rows()).map(|r| shift[(r, j)]).collect();
                let tmin = tcol.iter().cloned().fold(f64::INFINITY, f64::min);
                let tmax = tcol.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                // position 0 has no shift term
                let smin = scol.iter().cloned().fold(0.0, f64::min);
                let smax = scol.iter().cloned().fold(0.0, f64::max);
                lo[j] = lo[j].min(tmin + smin);
                hi[j] = hi[j].max(tmax + smax);
            }
        }
        for j in 0..d_k {
            if !(hi[j] > lo[j]) {
                lo[j] -= 0.5;
                hi[j] += 0.5;
            }
        }
        QuantizationConfig::new(self.attention.bits, lo, hi)
    }

    /// Forward pass from input rows. `selections` pins the retrieved sets,
    /// otherwise they are searched.
    pub fn forward_inputs(&self, x: &Matrix, selections: Option<&[TopKSelection]>) -> Result<ModelTrace> {
        let q = matmul(x, &self.w_q)?;
        let k = matmul(x, &self.w_k)?;
        let v = matmul(x, &self.w_v)?;
        let searched;
        let sels = match selections {
            Some(s) => s,
            None => {
                let opts = AttendOptions {
                    quantization: Some(self.quantization()?),
                    parallel: false,
                };
                searched = select(&q, &k, &self.attention, &opts)?;
                &searched
            }
        };
        let (attention_out, cache) = forward(&q, &k, &v, sels, &self.attention)?;
        let readout = matmul(&attention_out, &self.w_out)?;
        Ok(ModelTrace {
            inputs: x.clone(),
            attention_out,
            readout,
            cache,
        })
    }

    pub fn forward(&self, inst: &MqarInstance) -> Result<ModelTrace> {
        self.forward_inputs(&self.embed(&inst.tokens)?, None)
    }

    /// Mean squared distance between probe readouts and target embeddings.
    pub fn loss(&self, inst: &MqarInstance, trace: &ModelTrace) -> f64 {
        let p = inst.probe_positions.len() as f64;
        inst.probe_positions
            .iter()
            .zip(&inst.targets)
            .map(|(&pos, &tgt)| {
                trace
                    .readout
                    .row(pos)
                    .iter()
                    .zip(self.token_embedding.row(tgt))
                    .map(|(y, e)| (y - e) * (y - e))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / p
    }

    /// Loss and gradients for one instance, scaled by `weight`.
    pub fn loss_and_grads(
        &self,
        inst: &MqarInstance,
        selections: Option<&[TopKSelection]>,
        weight: f64,
    ) -> Result<(f64, ModelGrads)> {
        let x = self.embed(&inst.tokens)?;
        let trace = self.forward_inputs(&x, selections)?;
        let loss = self.loss(inst, &trace);
        let p = inst.probe_positions.len() as f64;
        let mut d_y = Matrix::zeros(trace.readout.rows(), trace.readout.cols());
        for (&pos, &tgt) in inst.probe_positions.iter().zip(&inst.targets) {
            let e = self.token_embedding.row(tgt);
            for ((d, y), e) in d_y.row_mut(pos).iter_mut().zip(trace.readout.row(pos)).zip(e) {
                *d = 2.0 * (y - e) / p * weight;
            }
        }
        let w_out = matmul(&trace.attention_out.transpose(), &d_y)?;
        let d_o = matmul(&d_y, &self.w_out.transpose())?;
        let g = backward(&trace.cache, &d_o, &self.attention)?;
        let xt = x.transpose();
        Ok((
            loss * weight,
            ModelGrads {
                w_q: matmul(&xt, &g.d_q)?,
                w_k: matmul(&xt, &g.d_k)?,
                w_v: matmul(&xt, &g.d_v)?,
                w_out,
                theta: g.d_theta,
            },
        ))
    }

    /// Mean loss and gradients over a batch, reduced in instance order.
    pub fn batch_loss_and_grads(&self, batch: &[MqarInstance]) -> Result<(f64, ModelGrads)> {
        let weight = 1.0 / batch.len() as f64;
        let parts: Vec<(f64, ModelGrads)> = batch
            .par_iter()
            .map(|inst| self.loss_and_grads(inst, None, weight))
            .collect::<Result<_>>()?;
        let mut total = ModelGrads::zeros_like(self);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total.accumulate(g)?;
        }
        Ok((loss, total))
    }
}

#[derive(Clone, Debug)]
pub struct TaskConfig {
    pub vocab: usize,
    pub n_pairs: usize,
    pub seq_len: usize,
    pub train_instances: usize,
    pub eval_instances: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab: 16,
            n_pairs: 8,
            seq_len: 64,
            train_instances: 32,
            eval_instances: 32,
        }
    }
}

impl TaskConfig {
    pub fn generate(&self, rng: &mut Rng, count: usize) -> Result<Vec<MqarInstance>> {
        (0..count)
            .map(|_| generate_mqar(rng, self.vocab, self.n_pairs, self.seq_len))
            .collect()
    }
}

/// Full-batch Adam on `batch`; returns the loss before each update.
pub fn train(model: &mut ModelParams, batch: &[MqarInstance], steps: usize, lr: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return param_err("empty training batch");
    }
    let mut adam = AdamState::new(model.num_trainable(), lr)?;
    let mut flat = model.flatten();
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grads) = model.batch_loss_and_grads(batch)?;
        if !loss.is_finite() {
            return Err(ZetaError::Diverged { step, loss });
        }
        trace.push(loss);
        adam.step(&mut flat, &grads.flatten())?;
        model.set_flat(&flat)?;
    }
    Ok(trace)
}

/// Mean of the first and last `window` entries of a loss trace.
pub fn smoothed_endpoints(trace: &[f64], window: usize) -> (f64, f64) {
    let w = window.clamp(1, trace.len().max(1));
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    (mean(&trace[..w.min(trace.len())]), mean(&trace[trace.len().saturating_sub(w)..]))
}

/// Anything that produces per-position readouts decodable against a token table.
pub trait Readout {
    fn readout(&self, inst: &MqarInstance) -> Result<Matrix>;
    fn decode_table(&self) -> &Matrix;
}

impl Readout for ModelParams {
    fn readout(&self, inst: &MqarInstance) -> Result<Matrix> {
        Ok(self.forward(inst)?.readout)
    }

    fn decode_table(&self) -> &Matrix {
        &self.token_embedding
    }
}

/// Nearest row of `table` to `y`, ties to the smaller token.
pub fn decode(table: &Matrix, y: &[f64]) -> usize {
    (0..table.rows())
        .map(|t| {
            let d: f64 = table.row(t).iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, t)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map_or(0, |(_, t)| t)
}

/// Fraction of probes whose readout decodes to the target token.
pub fn eval_accuracy<R: Readout + ?Sized>(model: &R, instances: &[MqarInstance]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for inst in instances {
        let y = model.readout(inst)?;
        for (&pos, &tgt) in inst.probe_positions.iter().zip(&inst.targets) {
            hits += usize::from(decode(model.decode_table(), y.row(pos)) == tgt);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Largest relative error between analytic and finite-difference gradients
/// of the instance loss, with the retrieved selections held fixed.
pub fn model_gradient_check(model: &ModelParams, inst: &MqarInstance) -> Result<f64> {
    let x = model.embed(&inst.tokens)?;
    let sels = model.forward_inputs(&x, None)?.cache.selections;
    let (_, grads) = model.loss_and_grads(inst, Some(&sels), 1.0)?;
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |flat| {
            probe.set_flat(flat).expect("flat length");
            probe
                .forward_inputs(&x, Some(&sels))
                .map(|t| probe.loss(inst, &t))
                .unwrap_or(f64::NAN)
        },
        &model.flatten(),
        DEFAULT_FD_STEP,
    )?;
    Ok(grads
        .flatten()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n, crate::cauchy_attention::GRADCHECK_FLOOR))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ModelParams, MqarInstance) {
        let mut rng = Rng::new(31);
        let cfg = ModelConfig {
            vocab: 6,
            d_model: 8,
            d_k: 2,
            d_v: 5,
            chunk_size: 3,
            k: 2,
        };
        let model = ModelParams::init(&mut rng, &cfg).unwrap();
        let inst = generate_mqar(&mut rng, 6, 3, 12).unwrap();
        (model, inst)
    }

    #[test]
    fn minimal_instance() {
        let inst = generate_mqar(&mut Rng::new(0), 4, 1, 3).unwrap();
        assert_eq!(inst.tokens[0], inst.tokens[2]);
        assert_eq!(inst.probe_positions, vec![2]);
        assert_eq!(inst.targets, vec![inst.tokens[1]]);
    }

    #[test]
    fn probes_are_solvable() {
        let inst = generate_mqar(&mut Rng::new(5), 16, 8, 64).unwrap();
        for (&pos, &tgt) in inst.probe_positions.iter().zip(&inst.targets) {
            let key = inst.tokens[pos];
            let found = (0..8).any(|p| inst.tokens[2 * p] == key && inst.tokens[2 * p + 1] == tgt);
            assert!(found, "probe at {pos}");
        }
        assert_eq!(inst, generate_mqar(&mut Rng::new(5), 16, 8, 64).unwrap());
    }

    #[test]
    fn infeasible_sizes() {
        assert!(generate_mqar(&mut Rng::new(0), 4, 2, 4).is_err());
        assert!(generate_mqar(&mut Rng::new(0), 4, 3, 20).is_err());
    }

    #[test]
    fn end_to_end_gradients() {
        let (model, inst) = tiny();
        let err = model_gradient_check(&model, &inst).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_learning_rate_keeps_loss() {
        let (mut model, inst) = tiny();
        let trace = train(&mut model, &[inst], 5, 0.0).unwrap();
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn no_future_leakage() {
        let (model, inst) = tiny();
        let x = model.embed(&inst.tokens).unwrap();
        let full = model.forward_inputs(&x, None).unwrap();
        for p in 0..inst.len() {
            let mut cut = x.clone();
            for t in p + 1..inst.len() {
                cut.row_mut(t).fill(0.0);
            }
            let partial = model.forward_inputs(&cut, None).unwrap();
            assert_eq!(full.readout.row(p), partial.readout.row(p), "position {p}");
        }
    }

    struct CopyOracle<'a>(&'a Matrix);

    impl Readout for CopyOracle<'_> {
        fn readout(&self, inst: &MqarInstance) -> Result<Matrix> {
            let mut y = Matrix::zeros(inst.len(), self.0.cols());
            for (&pos, &tgt) in inst.probe_positions.iter().zip(&inst.targets) {
                y.row_mut(pos).copy_from_slice(self.0.row(tgt));
            }
            Ok(y)
        }

        fn decode_table(&self) -> &Matrix {
            self.0
        }
    }

    #[test]
    fn copy_oracle_is_perfect() {
        let mut rng = Rng::new(2);
        let model = ModelParams::init(&mut rng, &ModelConfig::default()).unwrap();
        let insts = TaskConfig::default().generate(&mut rng, 3).unwrap();
        assert_eq!(eval_accuracy(&CopyOracle(&model.token_embedding), &insts).unwrap(), 1.0);
    }
}
