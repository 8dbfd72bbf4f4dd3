//! Dense and sparse linear-algebra kernels shared by the rest of the crate.
//!
//! Dense matrices are `nalgebra::DMatrix<f64>`. Sparse matrices use a
//! compressed row layout since every consumer walks samples row by row.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::local::NeighborMask;

pub type DenseMatrix = DMatrix<f64>;

/// Row-compressed sparse matrix with sorted, strictly increasing column
/// indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRowMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Borrowed view of one sparse row.
#[derive(Clone, Copy, Debug)]
pub struct SparseRow<'a> {
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl<'a> SparseRow<'a> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(self.values).map(|(&j, &v)| v * dense[j]).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

impl SparseRowMatrix {
    /// Builds a matrix from raw CSR arrays, validating every invariant.
    pub fn new(rows: usize, cols: usize, indptr: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        };
        m.validate(false)?;
        Ok(m)
    }

    /// Same as [`SparseRowMatrix::new`] but stored zeros are allowed. Used for
    /// matrices whose sparsity pattern is fixed by a mask.
    pub(crate) fn with_pattern(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        };
        m.validate(true)?;
        Ok(m)
    }

    /// Builds from per-row entry lists. Entries are sorted; explicit zeros are
    /// dropped; duplicate column indices are rejected.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self::new(indptr.len() - 1, cols, indptr, indices, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(a: &DenseMatrix) -> Self {
        let rows = (0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| (j, a[(i, j)])).collect())
            .collect();
        Self::from_rows(a.ncols(), rows).expect("dense matrix entries are finite")
    }

    fn validate(&self, allow_zeros: bool) -> Result<()> {
        if self.indptr.len() != self.rows + 1 || self.indptr[0] != 0 {
            return Err(Error::invalid("indptr length must be rows + 1 and start at 0"));
        }
        if *self.indptr.last().unwrap() != self.indices.len() || self.indices.len() != self.values.len() {
            return Err(Error::invalid("indptr, indices and values disagree on nnz"));
        }
        for i in 0..self.rows {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            if lo > hi {
                return Err(Error::invalid(format!("indptr decreases at row {i}")));
            }
            let idx = &self.indices[lo..hi];
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "column indices of row {i} are not strictly increasing"
                )));
            }
            if idx.last().is_some_and(|&j| j >= self.cols) {
                return Err(Error::invalid(format!("column index out of bounds in row {i}")));
            }
            for &v in &self.values[lo..hi] {
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite value in row {i}")));
                }
                if !allow_zeros && v == 0.0 {
                    return Err(Error::invalid(format!("explicit zero stored in row {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> SparseRow<'_> {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        SparseRow {
            indices: &self.indices[lo..hi],
            values: &self.values[lo..hi],
        }
    }

    pub fn row_iter(&self) -> impl Iterator<Item = SparseRow<'_>> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, which: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(which.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &i in which {
            let row = self.row(i);
            indices.extend_from_slice(row.indices);
            values.extend_from_slice(row.values);
            indptr.push(indices.len());
        }
        Self {
            rows: which.len(),
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter() {
                let p = next[j];
                indices[p] = i;
                values[p] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// `self · b` for dense `b` (cols × k).
    pub fn mul_dense(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.cols, "sparse-dense product shape mismatch");
        let k = b.ncols();
        let bt = b.transpose();
        let mut out_t = DenseMatrix::zeros(k, self.rows);
        for i in 0..self.rows {
            let mut col = out_t.column_mut(i);
            for (j, v) in self.row(i).iter() {
                col.axpy(v, &bt.column(j), 1.0);
            }
        }
        out_t.transpose()
    }

    /// `selfᵀ · b` for dense `b` (rows × k).
    pub fn transpose_mul_dense(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.rows, "sparse-transpose-dense product shape mismatch");
        let k = b.ncols();
        let bt = b.transpose();
        let mut out_t = DenseMatrix::zeros(k, self.cols);
        for i in 0..self.rows {
            let src = bt.column(i);
            for (j, v) in self.row(i).iter() {
                out_t.column_mut(j).axpy(v, &src, 1.0);
            }
        }
        out_t.transpose()
    }

    /// Dense `selfᵀ · self` (cols × cols).
    pub fn gram(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.cols, self.cols);
        for row in self.row_iter() {
            for (a, va) in row.iter() {
                for (b, vb) in row.iter() {
                    g[(a, b)] += va * vb;
                }
            }
        }
        g
    }

    /// Dense `self · selfᵀ` (rows × rows).
    pub fn outer_gram(&self) -> DenseMatrix {
        let t = self.transpose();
        let mut g = DenseMatrix::zeros(self.rows, self.rows);
        for col in t.row_iter() {
            for (a, va) in col.iter() {
                for (b, vb) in col.iter() {
                    g[(a, b)] += va * vb;
                }
            }
        }
        g
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Top-k singular triplets, singular values nonincreasing.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.transpose()
    }
}

pub fn all_finite(a: &DenseMatrix) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Flips column signs so that the first entry of each column of `u` above
/// 1e-10 in magnitude is positive; the same flips are applied to `v`.
pub(crate) fn canonicalize_signs(u: &mut DenseMatrix, mut v: Option<&mut DenseMatrix>) {
    for j in 0..u.ncols() {
        let flip = u.column(j).iter().find(|x| x.abs() > 1e-10).is_some_and(|&x| x < 0.0);
        if flip {
            u.column_mut(j).neg_mut();
            if let Some(v) = v.as_deref_mut() {
                v.column_mut(j).neg_mut();
            }
        }
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

fn select_columns(a: &DenseMatrix, order: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), order.len(), |i, j| a[(i, order[j])])
}

pub fn thin_svd(a: &DenseMatrix, k: usize) -> Result<ThinSvd> {
    let (m, n) = a.shape();
    if k == 0 || k > m.min(n) {
        return Err(Error::invalid(format!("thin_svd: k = {k} outside 1..={}", m.min(n))));
    }
    if !all_finite(a) {
        return Err(Error::invalid("thin_svd: non-finite entries"));
    }
    let svd = a.clone().svd(true, true);
    let mut u_full = svd.u.expect("u requested");
    let mut v_full = svd.v_t.expect("v requested").transpose();
    let mut sv = svd.singular_values.as_slice().to_vec();
    let rebuilt = &u_full * DMatrix::from_diagonal(&DVector::from_column_slice(&sv)) * v_full.transpose();
    if (rebuilt - a).norm() > SVD_RECOMPOSE_TOL * a.norm() {
        // nalgebra's 2×2 kernel loses digits on nearly singular blocks.
        (u_full, sv, v_full) = jacobi_svd(a);
    }
    let order: Vec<usize> = descending_order(&sv).into_iter().take(k).collect();
    let mut u = select_columns(&u_full, &order);
    let mut v = select_columns(&v_full, &order);
    let s = order.iter().map(|&i| sv[i]).collect();
    canonicalize_signs(&mut u, Some(&mut v));
    Ok(ThinSvd { u, s, v })
}

const SVD_RECOMPOSE_TOL: f64 = 1e-13;

/// One-sided Jacobi SVD, `a = U·diag(s)·Vᵀ` with min(m, n) columns in U and V.
fn jacobi_svd(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = jacobi_svd(&a.transpose());
        return (v, s, u);
    }
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut u = w;
    for (j, &sj) in s.iter().enumerate() {
        if sj > 0.0 {
            u.column_mut(j).unscale_mut(sj);
        }
    }
    // Columns for zero singular values are filled from an orthonormal completion.
    let zero: Vec<usize> = (0..n).filter(|&j| s[j] == 0.0).collect();
    if !zero.is_empty() {
        for (&j, col) in zero.iter().zip(complement_columns(&u, zero.len())) {
            u.set_column(j, &col);
        }
    }
    (u, s, v)
}

/// `count` unit vectors orthogonal to the nonzero columns of `u`.
fn complement_columns(u: &DenseMatrix, count: usize) -> Vec<DVector<f64>> {
    let m = u.nrows();
    let mut basis: Vec<DVector<f64>> = (0..u.ncols())
        .map(|j| u.column(j).into_owned())
        .filter(|c| c.norm() > 0.5)
        .collect();
    let mut out = Vec::new();
    for e in 0..m {
        if out.len() == count {
            break;
        }
        let mut c = DVector::zeros(m);
        c[e] = 1.0;
        for b in &basis {
            let proj = b.dot(&c);
            c.axpy(-proj, b, 1.0);
        }
        let norm = c.norm();
        if norm > 1e-8 {
            c.unscale_mut(norm);
            basis.push(c.clone());
            out.push(c);
        }
    }
    out
}

pub fn is_symmetric(m: &DenseMatrix, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

/// Top-k algebraically largest eigenpairs of a symmetric matrix.
pub fn truncated_sym_eig(m: &DenseMatrix, k: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = m.nrows();
    if !all_finite(m) {
        return Err(Error::invalid("truncated_sym_eig: non-finite entries"));
    }
    if !is_symmetric(m, 1e-10) {
        return Err(Error::invalid("truncated_sym_eig: matrix is not symmetric"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("truncated_sym_eig: k = {k} outside 1..={n}")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.as_slice();
    let order: Vec<usize> = descending_order(vals).into_iter().take(k).collect();
    let mut vecs = select_columns(&eig.eigenvectors, &order);
    canonicalize_signs(&mut vecs, None);
    Ok((order.iter().map(|&i| vals[i]).collect(), vecs))
}

/// Solves `E·S + S·E = C` for symmetric positive definite `S` by diagonalizing `S`.
pub fn solve_sylvester_sym(s: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix> {
    let r = s.nrows();
    if !s.is_square() || c.shape() != (r, r) {
        return Err(Error::invalid("solve_sylvester_sym: shape mismatch"));
    }
    let eig = ((s + s.transpose()) * 0.5).symmetric_eigen();
    let lam = &eig.eigenvalues;
    let lmax = lam.amax();
    let lmin = lam.min();
    if !(lmin > 1e-14 * lmax) {
        return Err(Error::RankDeficient(format!(
            "Sylvester operator is singular: eigenvalues of S span [{lmin:e}, {lmax:e}]"
        )));
    }
    let q = &eig.eigenvectors;
    let mut ct = q.transpose() * c * q;
    for i in 0..r {
        for j in 0..r {
            ct[(i, j)] /= lam[i] + lam[j];
        }
    }
    Ok(q * ct * q.transpose())
}

/// Entries `(Z Zᵀ − target)_ij` on the mask pattern only.
pub fn masked_gram_residual(z: &DenseMatrix, mask: &NeighborMask) -> Result<SparseRowMatrix> {
    if z.nrows() != mask.n() {
        return Err(Error::invalid(format!(
            "masked_gram_residual: Z has {} rows, mask expects {}",
            z.nrows(),
            mask.n()
        )));
    }
    let zt = z.transpose();
    let mut values = Vec::with_capacity(mask.nnz());
    for i in 0..mask.n() {
        let zi = zt.column(i);
        for (j, target) in mask.row(i) {
            values.push(zi.dot(&zt.column(j)) - target);
        }
    }
    SparseRowMatrix::with_pattern(
        mask.n(),
        mask.n(),
        mask.indptr().to_vec(),
        mask.indices().to_vec(),
        values,
    )
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    x.signum() * (x.abs() - t).max(0.0)
}

/// Thin QR; `q` has orthonormal columns, `q · r = a`.
/// `Aᵀ·B` through the blocked product; nalgebra's `tr_mul` is a loop of dot
/// products and much slower for tall operands.
pub fn at_mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.transpose() * b
}

pub(crate) fn thin_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}

/// Singular values of a tall matrix via QR followed by an SVD of the small
/// triangular factor.
pub(crate) fn singular_values_tall(a: &DenseMatrix) -> DVector<f64> {
    if a.nrows() > a.ncols() {
        a.clone().qr().r().singular_values()
    } else {
        a.singular_values()
    }
}
