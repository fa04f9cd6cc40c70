//! Grid quantization and Morton (Z-order) bit interleaving.
//!
//! A point `x ∈ ℝ^d` is mapped to integer grid coordinates with `b` bits per
//! dimension, and the code is formed by reading bit planes from most to least
//! significant, taking one bit from each dimension in order:
//!
//! ```text
//! code = g0[b-1] g1[b-1] … g{d-1}[b-1]  g0[b-2] …  g{d-1}[0]
//! ```
//!
//! With `d = 1` the code is the grid value itself, so Z-order reduces to the
//! numeric order of the quantized scalars.

use rayon::prelude::*;

use crate::error::{param_err, shape_err, Result};
use crate::numerics::Matrix;

pub const MAX_DIMS: usize = 8;
pub const CODE_BITS: usize = 63;

/// A Morton code tagged with the sequence position it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ZCode {
    pub code: u64,
    pub source_index: usize,
}

/// Largest per-dimension bit width that fits `dims` coordinates into one code.
pub fn default_bits(dims: usize) -> usize {
    CODE_BITS / dims.max(1)
}

fn check_budget(dims: usize, bits: usize) -> Result<()> {
    if dims == 0 || dims > MAX_DIMS {
        return param_err(format!("dims must be in 1..={MAX_DIMS}, got {dims}"));
    }
    if bits == 0 || dims * bits > CODE_BITS {
        return param_err(format!(
            "{dims} dims x {bits} bits does not fit a {CODE_BITS}-bit code"
        ));
    }
    Ok(())
}

/// Per-dimension affine map from `[lo, hi]` onto `0..2^bits`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationConfig {
    dims: usize,
    bits_per_dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl QuantizationConfig {
    /// Explicit bounds. Degenerate or inverted dims are rejected; use
    /// [`QuantizationConfig::fit`] to get the widening rule.
    pub fn new(bits_per_dim: usize, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let dims = lo.len();
        check_budget(dims, bits_per_dim)?;
        if hi.len() != dims {
            return shape_err(format!("{} lower bounds but {} upper bounds", dims, hi.len()));
        }
        for j in 0..dims {
            if !(lo[j].is_finite() && hi[j].is_finite() && hi[j] > lo[j]) {
                return param_err(format!("dim {j}: need finite lo < hi, got [{}, {}]", lo[j], hi[j]));
            }
        }
        Ok(Self {
            dims,
            bits_per_dim,
            lo,
            hi,
        })
    }

    /// Column-wise min/max over `points`; constant columns are widened by ±0.5.
    pub fn fit(points: &Matrix, bits_per_dim: usize) -> Result<Self> {
        if points.rows() == 0 {
            return param_err("cannot fit quantization bounds to an empty point set");
        }
        let dims = points.cols();
        check_budget(dims, bits_per_dim)?;
        let mut lo = vec![f64::INFINITY; dims];
        let mut hi = vec![f64::NEG_INFINITY; dims];
        for row in points.row_iter() {
            for j in 0..dims {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        for j in 0..dims {
            if !(lo[j].is_finite() && hi[j].is_finite()) {
                return param_err(format!("column {j} contains non-finite values"));
            }
            if hi[j] <= lo[j] {
                lo[j] -= 0.5;
                hi[j] += 0.5;
            }
        }
        Self::new(bits_per_dim, lo, hi)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bits_per_dim(&self) -> usize {
        self.bits_per_dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn max_level(&self) -> u64 {
        (1u64 << self.bits_per_dim) - 1
    }

    /// Round-half-up grid coordinates, clamped to the grid.
    pub fn quantize(&self, point: &[f64]) -> Result<Vec<u64>> {
        if point.len() != self.dims {
            return shape_err(format!("point has {} coords, config has {} dims", point.len(), self.dims));
        }
        Ok(point
            .iter()
            .enumerate()
            .map(|(j, &x)| self.quantize_coord(j, x))
            .collect())
    }

    #[inline]
    fn quantize_coord(&self, j: usize, x: f64) -> u64 {
        let max = self.max_level();
        let t = (x - self.lo[j]) / (self.hi[j] - self.lo[j]);
        let level = (t * max as f64 + 0.5).floor();
        if level.is_nan() || level <= 0.0 {
            0
        } else if level >= max as f64 {
            max
        } else {
            level as u64
        }
    }

    /// Quantize then interleave one point.
    pub fn encode(&self, point: &[f64]) -> Result<u64> {
        let grid = self.quantize(point)?;
        interleave(&grid, self.bits_per_dim)
    }
}

/// Interleave grid coordinates into a Morton code, most significant plane first.
pub fn interleave(grid: &[u64], bits_per_dim: usize) -> Result<u64> {
    check_budget(grid.len(), bits_per_dim)?;
    let limit = 1u64 << bits_per_dim;
    if let Some((j, g)) = grid.iter().enumerate().find(|(_, &g)| g >= limit) {
        return param_err(format!("grid value {g} in dim {j} needs more than {bits_per_dim} bits"));
    }
    Ok(interleave_unchecked(grid, bits_per_dim))
}

#[inline]
fn interleave_unchecked(grid: &[u64], bits_per_dim: usize) -> u64 {
    let mut code = 0u64;
    for plane in (0..bits_per_dim).rev() {
        for &g in grid {
            code = (code << 1) | ((g >> plane) & 1);
        }
    }
    code
}

/// Inverse of [`interleave`].
pub fn deinterleave(code: u64, dims: usize, bits_per_dim: usize) -> Result<Vec<u64>> {
    check_budget(dims, bits_per_dim)?;
    let total = dims * bits_per_dim;
    if code >> total != 0 {
        return param_err(format!("code {code} exceeds the {total}-bit budget"));
    }
    let mut grid = vec![0u64; dims];
    let mut pos = total;
    for plane in (0..bits_per_dim).rev() {
        for g in grid.iter_mut() {
            pos -= 1;
            *g |= ((code >> pos) & 1) << plane;
        }
    }
    Ok(grid)
}

/// Encodes every row of `points`; `source_index` is the row number.
pub fn encode_batch(points: &Matrix, cfg: &QuantizationConfig) -> Result<Vec<ZCode>> {
    if points.cols() != cfg.dims {
        return shape_err(format!("points have {} cols, config has {} dims", points.cols(), cfg.dims));
    }
    let encode_row = |i: usize| {
        let row = points.row(i);
        let mut grid = [0u64; MAX_DIMS];
        for j in 0..cfg.dims {
            grid[j] = cfg.quantize_coord(j, row[j]);
        }
        ZCode {
            code: interleave_unchecked(&grid[..cfg.dims], cfg.bits_per_dim),
            source_index: i,
        }
    };
    const PAR_THRESHOLD: usize = 1 << 14;
    Ok(if points.rows() >= PAR_THRESHOLD {
        (0..points.rows()).into_par_iter().map(encode_row).collect()
    } else {
        (0..points.rows()).map(encode_row).collect()
    })
}
