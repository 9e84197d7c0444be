//! Dense complex linear algebra and seeded randomness.
//!
//! Everything downstream (channel realizations, the link math, the learned
//! pipeline) works in terms of [`ComplexMatrix`] — a dense, row-major,
//! double-precision complex matrix. The type is deliberately small: it
//! implements exactly the operations the simulator needs, with shape errors
//! instead of panics so that misconfigured experiments fail cleanly.
//!
//! Vectorization convention used across the whole crate: `vec(A)` stacks
//! **columns** (column-major), and the inverse reshape fills columns first.
//! Every flatten/reshape of a complex matrix into a real feature vector goes
//! through [`ComplexMatrix::vec_col_major`] / [`ComplexMatrix::from_vec_col_major`]
//! so the convention cannot drift between modules.

pub mod container;
mod rng;
mod svd;

pub use rng::{RngStream, StreamPurpose};
pub use svd::{lstsq, svd, Svd};

use num_complex::Complex64;

use crate::{Error, Result};

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major data. The data length must be
    /// `rows * cols`; zero-sized matrices are representable but most
    /// operations reject them.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "ComplexMatrix::new",
                details: format!(
                    "{}x{} needs {} entries, got {}",
                    rows,
                    cols,
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_columns(cols: &[Vec<Complex64>]) -> Result<Self> {
        let ncols = cols.len();
        let nrows = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != nrows) {
            return Err(Error::Shape {
                op: "ComplexMatrix::from_columns",
                details: "columns have unequal lengths".into(),
            });
        }
        Ok(Self::from_fn(nrows, ncols, |i, j| cols[j][i]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major backing slice.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[Complex64]) {
        debug_assert_eq!(col.len(), self.rows);
        for (i, &v) in col.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape {
                op: "matmul",
                details: format!(
                    "inner dimensions differ: {}x{} * {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            });
        }
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        // i-k-j loop order keeps the inner loop contiguous in both `rhs`
        // and `out` for row-major storage.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &r) in orow.iter_mut().zip(rrow) {
                    *o += a * r;
                }
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |i, j| self.at(j, i).conj())
    }

    pub fn transpose(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    pub fn conj(&self) -> ComplexMatrix {
        self.map(|v| v.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        rhs: &ComplexMatrix,
        op: &'static str,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<ComplexMatrix> {
        if self.dims() != rhs.dims() {
            return Err(Error::Shape {
                op,
                details: format!("{}x{} vs {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        Ok(ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, c: Complex64) -> ComplexMatrix {
        self.map(|v| v * c)
    }

    pub fn scale_re(&self, c: f64) -> ComplexMatrix {
        self.map(|v| v * c)
    }

    /// Squared Frobenius norm. Zero for empty matrices; the public
    /// [`fro_norm`](Self::fro_norm) wraps this with the emptiness check.
    pub fn fro_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Frobenius norm. Empty matrices are rejected: a norm of "no entries"
    /// almost always indicates a dimension bug upstream.
    pub fn fro_norm(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Domain {
                op: "fro_norm",
                details: "empty matrix".into(),
            });
        }
        Ok(self.fro_norm_sq().sqrt())
    }

    pub fn trace(&self) -> Result<Complex64> {
        if self.rows != self.cols {
            return Err(Error::Shape {
                op: "trace",
                details: format!("matrix is {}x{}, not square", self.rows, self.cols),
            });
        }
        Ok((0..self.rows).map(|i| self.at(i, i)).sum())
    }

    /// Column-major flatten: `out[i + j*rows] = A[i, j]`.
    pub fn vec_col_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.at(i, j));
            }
        }
        out
    }

    /// Inverse of [`vec_col_major`](Self::vec_col_major): fills columns first.
    pub fn from_vec_col_major(rows: usize, cols: usize, v: &[Complex64]) -> Result<Self> {
        if v.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec_col_major",
                details: format!("{}x{} needs {} entries, got {}", rows, cols, rows * cols, v.len()),
            });
        }
        Ok(Self::from_fn(rows, cols, |i, j| v[j * rows + i]))
    }

    /// Interleaves the column-major flatten into a real vector
    /// `[re(v_0), .., re(v_{n-1}), im(v_0), .., im(v_{n-1})]` — the layout
    /// every network in the pipeline consumes.
    pub fn to_real_features(&self) -> Vec<f64> {
        let v = self.vec_col_major();
        let mut out = Vec::with_capacity(2 * v.len());
        out.extend(v.iter().map(|z| z.re));
        out.extend(v.iter().map(|z| z.im));
        out
    }

    /// Inverse of [`to_real_features`](Self::to_real_features).
    pub fn from_real_features(rows: usize, cols: usize, feats: &[f64]) -> Result<Self> {
        let n = rows * cols;
        if feats.len() != 2 * n {
            return Err(Error::Shape {
                op: "from_real_features",
                details: format!("{}x{} needs {} reals, got {}", rows, cols, 2 * n, feats.len()),
            });
        }
        let v: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(feats[k], feats[n + k]))
            .collect();
        Self::from_vec_col_major(rows, cols, &v)
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Largest entry-wise absolute difference against another matrix of the
    /// same shape. Handy in tests and convergence checks.
    pub fn max_abs_diff(&self, rhs: &ComplexMatrix) -> Result<f64> {
        if self.dims() != rhs.dims() {
            return Err(Error::Shape {
                op: "max_abs_diff",
                details: format!("{}x{} vs {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

/// Draws an i.i.d. circularly-symmetric complex Gaussian matrix: each entry
/// has independent real and imaginary parts distributed `N(0, variance/2)`,
/// so the complex variance per entry is `variance`.
///
/// Entries are drawn in row-major order, real part before imaginary part —
/// the order is part of the reproducibility contract.
pub fn sample_cgauss(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut RngStream,
) -> Result<ComplexMatrix> {
    if variance < 0.0 || !variance.is_finite() {
        return Err(Error::Domain {
            op: "sample_cgauss",
            details: format!("variance must be finite and >= 0, got {variance}"),
        });
    }
    let sigma = (variance / 2.0).sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = sigma * rng.standard_normal();
        let im = sigma * rng.standard_normal();
        data.push(Complex64::new(re, im));
    }
    ComplexMatrix::new(rows, cols, data)
}
