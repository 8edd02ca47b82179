//! Minimal dense linear algebra: a row-major matrix type, an unpivoted
//! LDL^T factorization, and a compressed-row view used for cheap matvecs.
//!
//! The LDL^T routine has no pivoting on purpose: every system factored here
//! is either positive definite (`P + sigma*I + rho*C'C`) or quasi-definite
//! (the polish KKT matrix with `+delta` / `-delta` regularization), and both
//! classes admit a stable unpivoted factorization.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// y = self * x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        y
    }

    /// y = self^T * x
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            if xr != 0.0 {
                for (c, a) in row.iter().enumerate() {
                    y[c] += a * xr;
                }
            }
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A - A^T| over all entries; only defined for square matrices.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// Sparse rows harvested from a dense matrix: `(col, value)` pairs per row.
/// Used for matvecs when the dense operand is mostly zeros (the dispatch
/// constraint matrices are block lower-triangular with short rows).
#[derive(Debug, Clone)]
pub struct SparseRows {
    nrows: usize,
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_dense(m: &Matrix) -> Self {
        let rows = (0..m.rows())
            .map(|r| {
                m.row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect();
        SparseRows {
            nrows: m.rows(),
            ncols: m.cols(),
            rows,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(c, v) in row {
                acc += v * x[c];
            }
            y[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.fill(0.0);
        for (r, row) in self.rows.iter().enumerate() {
            let xr = x[r];
            if xr != 0.0 {
                for &(c, v) in row {
                    y[c] += v * xr;
                }
            }
        }
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.matvec_transpose_into(x, &mut y);
        y
    }
}

/// Unpivoted LDL^T factorization of a symmetric matrix, stored packed:
/// unit lower triangle in `l`, diagonal in `d`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    l: Vec<f64>, // row-major lower triangle, unit diagonal implicit
    d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorError {
    /// Pivot index where the factorization broke down.
    pub pivot: usize,
}

impl std::fmt::Display for FactorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LDL^T factorization broke down at pivot {}", self.pivot)
    }
}

impl std::error::Error for FactorError {}

impl LdlFactor {
    /// Factor a symmetric matrix (only the lower triangle is read).
    ///
    /// `require_positive`: fail on any non-positive pivot (positive definite
    /// input expected). When false, only near-zero pivots are rejected,
    /// which admits quasi-definite matrices.
    pub fn factor(m: &Matrix, require_positive: bool) -> Result<Self, FactorError> {
        let n = m.rows();
        assert_eq!(n, m.cols());
        let mut l = vec![0.0; n * n];
        let mut d = vec![0.0; n];
        // scale for the breakdown test
        let scale = m.max_abs().max(1.0);
        let tiny = 1e-14 * scale;
        for j in 0..n {
            let mut dj = m.get(j, j);
            for k in 0..j {
                let ljk = l[j * n + k];
                dj -= ljk * ljk * d[k];
            }
            if require_positive {
                if dj <= tiny {
                    return Err(FactorError { pivot: j });
                }
            } else if dj.abs() <= tiny {
                return Err(FactorError { pivot: j });
            }
            d[j] = dj;
            for i in (j + 1)..n {
                let mut v = m.get(i, j);
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k] * d[k];
                }
                l[i * n + j] = v / dj;
            }
        }
        Ok(LdlFactor { n, l, d })
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        // forward: L y = b
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i * n + k] * b[k];
            }
            b[i] = v;
        }
        // diagonal
        for i in 0..n {
            b[i] /= self.d[i];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in (i + 1)..n {
                v -= self.l[k * n + i] * b[k];
            }
            b[i] = v;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
