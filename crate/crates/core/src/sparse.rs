//! Compressed sparse storage for complex matrices and column sets.
//!
//! [`ComplexSparseMatrix`] is a CSR matrix with sorted column indices and no
//! stored zeros. [`SparseColumns`] is a CSC container used for basis
//! functions, where each column is a fine-mesh vector with local support.

use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl ComplexSparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![C64::new(1.0, 0.0); n],
        }
    }

    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed
    /// in input order; entries that sum to exactly zero are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        // stable sort keeps the summation order of duplicates deterministic
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut it = triplets.into_iter().peekable();
        while let Some((r, c, v)) = it.next() {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            let mut acc = v;
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    acc += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if acc != ZERO {
                col_idx.push(c);
                values.push(acc);
                row_ptr[r + 1] += 1;
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_real_triplets(nrows: usize, ncols: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        Self::from_triplets(
            nrows,
            ncols,
            triplets.into_iter().map(|(r, c, v)| (r, c, C64::new(v, 0.0))).collect(),
        )
    }

    pub fn from_dense(rows: &[Vec<C64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols);
            for (j, &v) in row.iter().enumerate() {
                t.push((i, j, v));
            }
        }
        Self::from_triplets(nrows, ncols, t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[C64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => ZERO,
        }
    }

    /// Iterates over stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn mul_vec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).fold(ZERO, |acc, (&j, &v)| acc + v * x[j]);
        }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᴴ A y`.
    pub fn form(&self, x: &[C64], y: &[C64]) -> C64 {
        let ay = self.mul_vec(y);
        dot(x, &ay)
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.iter().map(|(i, j, v)| (j, i, v)).collect())
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.iter().map(|(i, j, v)| (j, i, v.conj())).collect(),
        )
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_triplets(self.nrows, self.ncols, self.iter().map(|(i, j, v)| (i, j, s * v)).collect())
    }

    /// Entrywise linear combination `Σ cₖ Mₖ` of equally shaped matrices.
    pub fn linear_combination(terms: &[(C64, &ComplexSparseMatrix)]) -> Self {
        let (nrows, ncols) = terms
            .first()
            .map(|(_, m)| (m.nrows, m.ncols))
            .expect("at least one term");
        let mut t = Vec::new();
        for (c, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "shape mismatch");
            t.extend(m.iter().map(|(i, j, v)| (i, j, c * v)));
        }
        Self::from_triplets(nrows, ncols, t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        Self::linear_combination(&[(C64::new(1.0, 0.0), self), (C64::new(-1.0, 0.0), other)]).max_abs()
    }

    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        let mut d = vec![vec![ZERO; self.ncols]; self.nrows];
        for (i, j, v) in self.iter() {
            d[i][j] = v;
        }
        d
    }

    pub fn to_faer_dense(&self) -> faer::Mat<C64> {
        let mut m = faer::Mat::<C64>::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn to_faer(&self) -> Result<faer::sparse::SparseColMat<usize, C64>> {
        let triplets: Vec<_> = self
            .iter()
            .map(|(i, j, v)| faer::sparse::Triplet::new(i, j, v))
            .collect();
        faer::sparse::SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{} {} {:.17e} {:.17e}", i + 1, j + 1, v.re, v.im)?;
        }
        Ok(())
    }
}

/// Column-compressed set of sparse vectors of a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumns {
    nrows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<C64>,
}

impl SparseColumns {
    pub fn new(nrows: usize) -> Self {
        Self {
            nrows,
            col_ptr: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles columns given as sorted `(row, value)` lists.
    pub fn from_columns(nrows: usize, columns: Vec<Vec<(usize, C64)>>) -> Self {
        let mut out = Self::new(nrows);
        for c in columns {
            out.push_column(c);
        }
        out
    }

    pub fn push_column(&mut self, entries: Vec<(usize, C64)>) {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        for (r, v) in entries {
            assert!(r < self.nrows);
            self.row_idx.push(r);
            self.values.push(v);
        }
        self.col_ptr.push(self.row_idx.len());
    }

    /// Appends the non-zero entries of a dense vector as a new column.
    pub fn push_dense(&mut self, dense: &[C64]) {
        assert_eq!(dense.len(), self.nrows);
        for (r, &v) in dense.iter().enumerate() {
            if v != ZERO {
                self.row_idx.push(r);
                self.values.push(v);
            }
        }
        self.col_ptr.push(self.row_idx.len());
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, j: usize) -> (&[usize], &[C64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn column_dense(&self, j: usize) -> Vec<C64> {
        let mut d = vec![ZERO; self.nrows];
        let (rows, vals) = self.column(j);
        for (&r, &v) in rows.iter().zip(vals) {
            d[r] = v;
        }
        d
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    /// `Σ_j x_j col_j`.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols());
        let mut y = vec![ZERO; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            let (rows, vals) = self.column(j);
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * xj;
            }
        }
        y
    }

    /// `(col_jᴴ y)_j`.
    pub fn adjoint_mul_vec(&self, y: &[C64]) -> Vec<C64> {
        assert_eq!(y.len(), self.nrows);
        (0..self.ncols())
            .map(|j| {
                let (rows, vals) = self.column(j);
                rows.iter().zip(vals).fold(ZERO, |acc, (&r, &v)| acc + v.conj() * y[r])
            })
            .collect()
    }

    /// Concatenates column sets with a common row count.
    pub fn hstack(parts: &[&SparseColumns]) -> Self {
        let nrows = parts.first().map_or(0, |p| p.nrows);
        let mut out = Self::new(nrows);
        for p in parts {
            assert_eq!(p.nrows, nrows);
            for j in 0..p.ncols() {
                let (rows, vals) = p.column(j);
                out.push_column(rows.iter().copied().zip(vals.iter().copied()).collect());
            }
        }
        out
    }

    /// Row-wise view: for every row, the `(column, value)` pairs touching it.
    fn row_lists(&self) -> Vec<Vec<(usize, C64)>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for j in 0..self.ncols() {
            let (ri, vals) = self.column(j);
            for (&r, &v) in ri.iter().zip(vals) {
                rows[r].push((j, v));
            }
        }
        rows
    }
}

/// Petrov–Galerkin product `G[j, k] = test_jᴴ A trial_k`.
///
/// Columns of the result are computed independently and in parallel; each
/// column is accumulated in a fixed order so the output is reproducible.
pub fn galerkin_product(
    test: &SparseColumns,
    a: &ComplexSparseMatrix,
    trial: &SparseColumns,
) -> ComplexSparseMatrix {
    assert_eq!(a.nrows(), test.nrows());
    assert_eq!(a.ncols(), trial.nrows());
    let test_rows = test.row_lists();
    // columns of A as rows of the transpose
    let a_cols = a.transpose();
    let n = a.nrows();
    let nt = test.ncols();
    let columns: Vec<Vec<(usize, C64)>> = (0..trial.ncols())
        .into_par_iter()
        .map_init(
            || (vec![ZERO; n], vec![false; n], vec![ZERO; nt], vec![false; nt]),
            |(y, ymark, acc, amark), k| {
                let (rows, vals) = trial.column(k);
                let mut touched = Vec::new();
                for (&c, &tv) in rows.iter().zip(vals) {
                    let (ai, av) = a_cols.row(c);
                    for (&i, &v) in ai.iter().zip(av) {
                        if !ymark[i] {
                            ymark[i] = true;
                            touched.push(i);
                        }
                        y[i] += v * tv;
                    }
                }
                touched.sort_unstable();
                let mut out_touched = Vec::new();
                for &i in &touched {
                    let yi = y[i];
                    for &(j, sv) in &test_rows[i] {
                        if !amark[j] {
                            amark[j] = true;
                            out_touched.push(j);
                        }
                        acc[j] += sv.conj() * yi;
                    }
                    y[i] = ZERO;
                    ymark[i] = false;
                }
                out_touched.sort_unstable();
                out_touched
                    .iter()
                    .map(|&j| {
                        let v = acc[j];
                        acc[j] = ZERO;
                        amark[j] = false;
                        (j, v)
                    })
                    .collect()
            },
        )
        .collect();
    let mut t = Vec::new();
    for (k, col) in columns.into_iter().enumerate() {
        t.extend(col.into_iter().map(|(j, v)| (j, k, v)));
    }
    ComplexSparseMatrix::from_triplets(nt, trial.ncols(), t)
}

/// `xᴴ y`.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
}

pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn conj_vec(x: &[C64]) -> Vec<C64> {
    x.iter().map(|v| v.conj()).collect()
}

pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(x: &[C64], y: &[C64]) -> Vec<C64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn real_vec(x: &[f64]) -> Vec<C64> {
    x.iter().map(|&v| C64::new(v, 0.0)).collect()
}
