//! Compressed-row sparse matrices and a direct sparse solver.
//!
//! Every assembled operator in the crate is a [`CsrMatrix`]. Factorization is
//! delegated to `faer`'s supernodal LU; the wrapper adds iterative refinement
//! and a residual check so callers get a verified solution or an error.

use faer::sparse::SparseColMat;
use faer::prelude::SpSolver;
use faer::Mat;

use crate::error::SolverError;

/// Sparse operator in compressed sparse row layout.
///
/// Column indices are sorted and unique within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

/// Assembled linear operator between two discrete function spaces.
pub type LinearOperator = CsrMatrix;

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::identity(diag.len());
        m.data.copy_from_slice(diag);
        m
    }

    /// Builds a matrix from raw CSR arrays. Indices must be sorted per row.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(indptr.len(), nrows + 1);
        debug_assert_eq!(indices.len(), data.len());
        debug_assert!(indices.iter().all(|&j| j < ncols));
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Duplicates are summed in the order they appear, so the result only
    /// depends on the triplet sequence.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of {nrows}x{ncols}");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut order = vec![0usize; triplets.len()];
        let mut next = counts.clone();
        for (k, &(i, _, _)) in triplets.iter().enumerate() {
            order[next[i]] = k;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend(order[counts[i]..counts[i + 1]].iter().map(|&k| (triplets[k].1, triplets[k].2)));
            // stable: equal columns keep insertion order
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in &row {
                if last == Some(j) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Iterates over the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.data[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            out.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `y += alpha * A x`
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let s: f64 = self.row(i).map(|(j, v)| v * x[j]).sum();
            *yi += alpha * s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                indices[next[j]] = i;
                data[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            data,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * self + beta * other`
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols), "shape mismatch");
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut data = Vec::with_capacity(indices.capacity());
        indptr.push(0);
        for i in 0..self.nrows {
            let (mut a, ae) = (self.indptr[i], self.indptr[i + 1]);
            let (mut b, be) = (other.indptr[i], other.indptr[i + 1]);
            while a < ae || b < be {
                let ja = if a < ae { self.indices[a] } else { usize::MAX };
                let jb = if b < be { other.indices[b] } else { usize::MAX };
                if ja == jb {
                    indices.push(ja);
                    data.push(alpha * self.data[a] + beta * other.data[b]);
                    a += 1;
                    b += 1;
                } else if ja < jb {
                    indices.push(ja);
                    data.push(alpha * self.data[a]);
                    a += 1;
                } else {
                    indices.push(jb);
                    data.push(beta * other.data[b]);
                    b += 1;
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.lin_comb(1.0, other, 1.0)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Left-multiplies by a diagonal matrix.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in out.indptr[i]..out.indptr[i + 1] {
                out.data[k] *= d[i];
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest absolute difference between `A` and `Aᵀ`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        self.lin_comb(1.0, &t, -1.0)
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        out
    }

    /// Imposes `x[d] = value` for each Dirichlet pair by zeroing row and
    /// column `d`, putting 1 on the diagonal and moving the column to `rhs`.
    pub fn apply_dirichlet(&mut self, rhs: &mut [f64], dofs: &[(usize, f64)]) {
        assert_eq!(self.nrows, self.ncols);
        let mut fixed = vec![None; self.nrows];
        for &(d, v) in dofs {
            fixed[d] = Some(v);
        }
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[k];
                if fixed[i].is_some() {
                    self.data[k] = if i == j { 1.0 } else { 0.0 };
                } else if let Some(v) = fixed[j] {
                    rhs[i] -= self.data[k] * v;
                    self.data[k] = 0.0;
                }
            }
        }
        for &(d, v) in dofs {
            rhs[d] = v;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// LU factorization of a square sparse matrix.
pub struct SparseLu {
    matrix: CsrMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.matrix.nrows).finish()
    }
}

impl SparseLu {
    pub fn new(matrix: &CsrMatrix) -> Result<Self, SolverError> {
        if matrix.nrows != matrix.ncols {
            return Err(SolverError::NotSquare(matrix.nrows, matrix.ncols));
        }
        let n = matrix.nrows;
        let trip: Vec<(usize, usize, f64)> = matrix.triplets();
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        // faer asserts on exactly singular pivots in its simplicial path
        let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| csc.sp_lu()))
            .map_err(|_| SolverError::Factorization("zero pivot".into()))?
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        Ok(Self {
            matrix: matrix.clone(),
            lu,
        })
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x.read(i, 0)).collect()
    }

    /// Solves `A x = b` with up to three rounds of iterative refinement.
    ///
    /// Returns the solution and the final relative residual
    /// `‖Ax − b‖ / ‖b‖` (absolute when `b = 0`).
    pub fn solve(&self, b: &[f64]) -> (Vec<f64>, f64) {
        let bnorm = norm2(b);
        let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
        let mut x = self.raw_solve(b);
        let mut res = self.residual(&x, b);
        let mut rel = norm2(&res) / scale;
        for _ in 0..3 {
            if !(rel > 1e-13) {
                break;
            }
            let dx = self.raw_solve(&res);
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
            let tres = self.residual(&trial, b);
            let trel = norm2(&tres) / scale;
            if trel < rel {
                x = trial;
                res = tres;
                rel = trel;
            } else {
                break;
            }
        }
        (x, rel)
    }

    /// Solves and fails when the relative residual exceeds `tol`.
    pub fn solve_checked(&self, b: &[f64], tol: f64) -> Result<Vec<f64>, SolverError> {
        let (x, rel) = self.solve(b);
        if !rel.is_finite() || rel > tol || x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Residual {
                residual: rel,
                tolerance: tol,
                size: b.len(),
            });
        }
        Ok(x)
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut r = b.to_vec();
        self.matrix.matvec_add(-1.0, x, &mut r);
        r
    }
}

/// One-shot solve of `A x = b` with residual check.
pub fn solve(matrix: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>, SolverError> {
    SparseLu::new(matrix)?.solve_checked(b, tol)
}
