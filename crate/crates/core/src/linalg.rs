//! Dense row-major matrices and the Householder QR used to orthonormalize
//! guidance features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude a diagonal entry of `R` marks a dependent column.
pub const RANK_TOL: f64 = 1e-10;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Matrix { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Matrix::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            assert_eq!(c.len(), rows, "ragged columns");
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.col(j)).collect()
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

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }

    /// `self * v` for a vector of length `cols`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Gram matrix `selfᵀ self`.
    pub fn gram(&self) -> Matrix {
        self.transpose().matmul(self)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` if either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}

/// Unit-length copy of `a`; `None` for the zero vector.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        None
    } else {
        Some(a.iter().map(|v| v / n).collect())
    }
}

/// Index of the first maximum. Ties resolve to the lowest index.
pub fn argmax(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Thin QR factorization `A = Q R` with `Q` of shape `d × K` (orthonormal
/// columns) and `R` of shape `K × K` (upper triangular, positive diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis {
    pub q: Matrix,
    pub r: Matrix,
}

/// Householder QR of a `d × K` matrix with `K ≤ d`.
///
/// The sign ambiguity of the factorization is removed by flipping rows of
/// `R` (and the matching columns of `Q`) so the diagonal of `R` is positive.
/// Applies `I - 2 v vᵀ` to rows `start..` and columns `first_col..` of `m`,
/// where `v` is a unit vector over those rows. Walks rows, not columns, to
/// stay cache friendly on row-major storage.
fn reflect_rows(m: &mut Matrix, v: &[f64], start: usize, first_col: usize) {
    let width = m.cols() - first_col;
    let mut s = vec![0.0; width];
    for (offset, &vi) in v.iter().enumerate() {
        let row = &m.row(start + offset)[first_col..];
        for (acc, &x) in s.iter_mut().zip(row) {
            *acc += vi * x;
        }
    }
    for (offset, &vi) in v.iter().enumerate() {
        let row = &mut m.row_mut(start + offset)[first_col..];
        for (x, &sc) in row.iter_mut().zip(&s) {
            *x -= 2.0 * vi * sc;
        }
    }
}

pub fn householder_qr(a: &Matrix) -> Result<OrthonormalBasis> {
    let (d, k) = (a.rows(), a.cols());
    if k > d {
        return Err(Error::TooManyClassesForDim { classes: k, dim: d });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("QR input".into()));
    }
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x: Vec<f64> = (j..d).map(|i| r[(i, j)]).collect();
        let xnorm = norm(&x);
        if xnorm < RANK_TOL {
            return Err(Error::RankDeficient {
                index: j,
                value: xnorm,
            });
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = norm(&v);
        if vnorm == 0.0 {
            // already of the form alpha * e1
            reflectors.push(Vec::new());
            continue;
        }
        for vi in &mut v {
            *vi /= vnorm;
        }
        reflect_rows(&mut r, &v, j, j);
        reflectors.push(v);
    }

    // Q = H_0 H_1 ... H_{k-1} [I_k; 0]
    let mut q = Matrix::zeros(d, k);
    for j in 0..k {
        q[(j, j)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        if v.is_empty() {
            continue;
        }
        reflect_rows(&mut q, v, j, 0);
    }

    let mut r_thin = Matrix::zeros(k, k);
    for i in 0..k {
        for c in i..k {
            r_thin[(i, c)] = r[(i, c)];
        }
    }
    for i in 0..k {
        if r_thin[(i, i)] < 0.0 {
            for c in i..k {
                r_thin[(i, c)] = -r_thin[(i, c)];
            }
            for row in 0..d {
                q[(row, i)] = -q[(row, i)];
            }
        }
        if r_thin[(i, i)].abs() < RANK_TOL {
            return Err(Error::RankDeficient {
                index: i,
                value: r_thin[(i, i)].abs(),
            });
        }
    }
    Ok(OrthonormalBasis { q, r: r_thin })
}
