use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{param_err, shape_err, Result};
use crate::numerics::Rng;

/// Row-major dense `f64` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return shape_err(format!("row {i} has length {}, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// Copies rows `[start, end)` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return shape_err(format!(
                "cannot stack {}-column and {}-column matrices",
                self.cols, other.cols
            ));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return shape_err(format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.row_iter() {
            writeln!(f, "  {r:?}")?;
        }
        write!(f, "]")
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return shape_err(format!(
            "matmul of {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    // i-k-j order keeps the inner loop on contiguous rows of `b` and `out`
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (kk, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(kk)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Matrix with i.i.d. `N(0, std²)` entries drawn from `rng`.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Result<Matrix> {
    if !(std > 0.0 && std.is_finite()) {
        return param_err(format!("standard deviation must be positive, got {std}"));
    }
    let data = (0..rows * cols).map(|_| std * rng.standard_normal()).collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ZetaError;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = Rng::new(3);
        let m = gaussian_matrix(&mut rng, 3, 4, 1.0).unwrap();
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn scalar_product() {
        let a = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = gaussian_matrix(&mut rng, 4, 5, 1.0).unwrap();
        let b = gaussian_matrix(&mut rng, 5, 2, 1.0).unwrap();
        let diff = matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(ZetaError::Shape(_))));
    }

    #[test]
    fn associativity() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let a = gaussian_matrix(&mut rng, 3, 4, 1.0).unwrap();
            let b = gaussian_matrix(&mut rng, 4, 5, 1.0).unwrap();
            let c = gaussian_matrix(&mut rng, 5, 2, 1.0).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
        }
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_matrix(&mut Rng::new(42), 8, 8, 1.0).unwrap();
        let b = gaussian_matrix(&mut Rng::new(42), 8, 8, 1.0).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn gaussian_sample_mean() {
        let m = gaussian_matrix(&mut Rng::new(1), 100, 100, 1.0).unwrap();
        let mean = m.as_slice().iter().sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn gaussian_rejects_zero_std() {
        assert!(matches!(
            gaussian_matrix(&mut Rng::new(1), 2, 2, 0.0),
            Err(ZetaError::Parameter(_))
        ));
    }

    #[test]
    fn from_rows_checks_lengths() {
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(m.transpose().row(0), &[1.0, 3.0]);
    }
}
