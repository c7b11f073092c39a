//! Dense row-major matrices with the two factorizations the regression code
//! needs: Householder QR for least squares and Cholesky for the small
//! symmetric systems of IRLS and ridge fits.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
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

    /// Builds a matrix from row-major data. Panics if the length does not
    /// match `rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Returns `[1 | self]`.
    pub fn with_intercept(&self) -> Self {
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.push(1.0);
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &w) in v.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o += w * x;
            }
        }
        out
    }

    /// `selfᵀ · diag(w) · self`, symmetric `cols × cols`.
    pub fn weighted_gram(&self, weights: Option<&[f64]>) -> Self {
        let p = self.cols;
        let mut g = Self::zeros(p, p);
        for r in 0..self.rows {
            let w = weights.map_or(1.0, |w| w[r]);
            let row = self.row(r);
            for i in 0..p {
                let wi = w * row[i];
                if wi == 0.0 {
                    continue;
                }
                for j in i..p {
                    g.data[i * p + j] += wi * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                g.data[i * p + j] = g.data[j * p + i];
            }
        }
        g
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Returns `None` if the matrix is not numerically positive definite.
    pub fn new(a: &Matrix) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky needs a square matrix");
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = libm::sqrt(d);
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Self { n, l })
    }

    /// Entry `(i, j)` of the lower-triangular factor `L`.
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.l[i * self.n + j]
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    /// Diagonal of the inverse of the factored matrix.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        let mut e = vec![0.0; n];
        (0..n)
            .map(|i| {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[i] = 1.0;
                self.solve(&e)[i]
            })
            .collect()
    }
}

/// Householder QR factorization of a tall matrix, kept in compact form.
#[derive(Clone, Debug)]
pub struct Qr {
    rows: usize,
    cols: usize,
    /// Column-major storage: Householder vectors below the diagonal, R on and above.
    qr: Vec<f64>,
    r_diag: Vec<f64>,
}

impl Qr {
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = (a.rows(), a.cols());
        let mut qr = vec![0.0; m * n];
        for c in 0..n {
            for r in 0..m {
                qr[c * m + r] = a.get(r, c);
            }
        }
        let mut r_diag = vec![0.0; n];
        for k in 0..n.min(m) {
            let mut norm = 0.0;
            for i in k..m {
                norm = libm::hypot(norm, qr[k * m + i]);
            }
            if norm != 0.0 {
                if qr[k * m + k] < 0.0 {
                    norm = -norm;
                }
                for i in k..m {
                    qr[k * m + i] /= norm;
                }
                qr[k * m + k] += 1.0;
                for j in (k + 1)..n {
                    let mut s = 0.0;
                    for i in k..m {
                        s += qr[k * m + i] * qr[j * m + i];
                    }
                    s = -s / qr[k * m + k];
                    for i in k..m {
                        qr[j * m + i] += s * qr[k * m + i];
                    }
                }
            }
            r_diag[k] = -norm;
        }
        Self {
            rows: m,
            cols: n,
            qr,
            r_diag,
        }
    }

    /// Numerical rank: diagonal entries of R larger than `rel_tol` times the
    /// largest one.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let max = self.r_diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if max == 0.0 {
            return 0;
        }
        self.r_diag
            .iter()
            .filter(|d| d.abs() > rel_tol * max)
            .count()
    }

    /// Least-squares solution of `A x ≈ b`. Assumes full column rank.
    pub fn solve_least_squares(&self, b: &[f64]) -> Vec<f64> {
        let (m, n) = (self.rows, self.cols);
        let mut y = b.to_vec();
        for k in 0..n.min(m) {
            let vkk = self.qr[k * m + k];
            if vkk == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for i in k..m {
                s += self.qr[k * m + i] * y[i];
            }
            s = -s / vkk;
            for i in k..m {
                y[i] += s * self.qr[k * m + i];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in (k + 1)..n {
                s -= self.r(k, j) * x[j];
            }
            x[k] = s / self.r_diag[k];
        }
        x
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.r_diag[i]
        } else {
            self.qr[j * self.rows + i]
        }
    }

    /// Diagonal of `(AᵀA)⁻¹ = R⁻¹R⁻ᵀ`, used for coefficient standard errors.
    pub fn gram_inverse_diagonal(&self) -> Vec<f64> {
        let n = self.cols;
        // Rows of R⁻¹ give the diagonal as squared row norms.
        let mut rinv = vec![0.0; n * n];
        for c in 0..n {
            rinv[c * n + c] = 1.0 / self.r_diag[c];
            for i in (0..c).rev() {
                let mut s = 0.0;
                for k in (i + 1)..=c {
                    s += self.r(i, k) * rinv[k * n + c];
                }
                rinv[i * n + c] = -s / self.r_diag[i];
            }
        }
        (0..n)
            .map(|i| (0..n).map(|c| rinv[i * n + c] * rinv[i * n + c]).sum())
            .collect()
    }
}
