use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseRowMatrix};

/// The neighbor index set Ω of one cluster together with the label-Gram
/// targets `y_iᵀ·y_j` on it. Row `i` lists `N_i` in increasing column order.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborMask {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    target: Vec<f64>,
}

impl NeighborMask {
    /// Builds a mask from per-row `(j, target)` lists. Every row must contain
    /// its own diagonal entry.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::invalid(format!("mask has {} rows, expected {n}", rows.len())));
        }
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut target = Vec::new();
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::invalid(format!("duplicate neighbor in row {i}")));
            }
            if row.last().is_some_and(|&(j, _)| j >= n) {
                return Err(Error::invalid(format!("neighbor index out of range in row {i}")));
            }
            if row.binary_search_by_key(&i, |&(j, _)| j).is_err() {
                return Err(Error::invalid(format!("row {i} does not contain its diagonal entry")));
            }
            for (j, t) in row {
                if !t.is_finite() {
                    return Err(Error::invalid(format!("non-finite target in row {i}")));
                }
                indices.push(j);
                target.push(t);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n,
            indptr,
            indices,
            target,
        })
    }

    /// Targets taken from a planted factor: `target_ij = z_iᵀ·z_j`.
    pub fn from_pattern_and_factor(pattern: &[Vec<usize>], z: &DenseMatrix) -> Result<Self> {
        let n = z.nrows();
        let rows = pattern
            .iter()
            .enumerate()
            .map(|(i, js)| {
                js.iter()
                    .map(|&j| (j, if j < n { z.row(i).dot(&z.row(j)) } else { 0.0 }))
                    .collect()
            })
            .collect();
        Self::from_rows(n, rows)
    }

    pub fn n(&self) -> usize {
        self.n
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

    pub fn targets(&self) -> &[f64] {
        &self.target
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.target[lo..hi].iter().copied())
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    /// `‖P_Ω(YYᵀ)‖²_F`.
    pub fn target_norm_sq(&self) -> f64 {
        self.target.iter().map(|t| t * t).sum()
    }

    pub fn mean_diagonal(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let sum: f64 = (0..self.n)
            .map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, t)| t))
            .sum();
        sum / self.n as f64
    }

    /// Dense 0/1 indicator of Ω.
    pub fn indicator(&self) -> DenseMatrix {
        let mut p = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                p[(i, j)] = 1.0;
            }
        }
        p
    }

    /// Dense `P_Ω ⊙ target`.
    pub fn target_dense(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t[(i, j)] = v;
            }
        }
        t
    }
}

/// For each label row `y_i`, `N_i` holds `i` plus the `nbar − 1` other rows
/// with the largest `y_iᵀ·y_j`, ties broken by lower index.
pub fn build_neighbor_mask(y: &SparseRowMatrix, nbar: usize) -> Result<NeighborMask> {
    let n = y.rows();
    if nbar == 0 || (nbar >= n && !(n == 1 && nbar == 1)) {
        return Err(Error::invalid(format!(
            "neighbor count {nbar} must satisfy 1 ≤ nbar < n = {n}"
        )));
    }
    let by_label = y.transpose();
    let mut acc = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut seen = vec![false; n];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        for (label, yv) in y.row(i).iter() {
            for (j, wv) in by_label.row(label).iter() {
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
                acc[j] += yv * wv;
            }
        }
        let mut cands: Vec<usize> = touched.iter().copied().filter(|&j| j != i).collect();
        cands.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]).then(a.cmp(&b)));
        // Zero inner products tie with every untouched row; the lowest indices win.
        let positive = cands.iter().take_while(|&&j| acc[j] > 0.0).count();
        cands.truncate(positive.min(nbar - 1));
        if cands.len() < nbar - 1 {
            let mut filler = Vec::new();
            let mut j = 0;
            while cands.len() + filler.len() < nbar - 1 {
                if j != i && !cands.contains(&j) {
                    filler.push(j);
                }
                j += 1;
            }
            cands.extend(filler);
        }
        let mut row: Vec<(usize, f64)> = cands.into_iter().map(|j| (j, acc[j])).collect();
        row.push((i, acc[i]));
        rows.push(row);
        for &j in &touched {
            acc[j] = 0.0;
            seen[j] = false;
        }
        touched.clear();
    }
    NeighborMask::from_rows(n, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(rows: &[&[usize]], l: usize) -> SparseRowMatrix {
        SparseRowMatrix::from_rows(l, rows.iter().map(|r| r.iter().map(|&j| (j, 1.0)).collect()).collect()).unwrap()
    }

    #[test]
    fn identical_rows_break_ties_by_index() {
        let y = labels(&[&[0, 2], &[0, 2], &[0, 2], &[0, 2]], 3);
        let mask = build_neighbor_mask(&y, 2).unwrap();
        assert_eq!(mask.neighbors(0), &[0, 1]);
        assert_eq!(mask.neighbors(1), &[0, 1]);
        assert_eq!(mask.neighbors(3), &[0, 3]);
        assert!(mask.targets().iter().all(|&t| t == 2.0));
    }

    #[test]
    fn orthogonal_rows_keep_only_self() {
        let y = labels(&[&[0], &[1], &[2]], 3);
        let mask = build_neighbor_mask(&y, 1).unwrap();
        for i in 0..3 {
            assert_eq!(mask.neighbors(i), &[i]);
        }
    }

    #[test]
    fn zero_score_fill_uses_lowest_indices() {
        let y = labels(&[&[0], &[1], &[2], &[2]], 3);
        let mask = build_neighbor_mask(&y, 3).unwrap();
        // row 2 has one positive neighbor (3), then the lowest zero-score index 0
        assert_eq!(mask.neighbors(2), &[0, 2, 3]);
        assert_eq!(mask.row(2).collect::<Vec<_>>(), vec![(0, 0.0), (2, 1.0), (3, 1.0)]);
        // row 0 has no positive neighbors: 1 and 2
        assert_eq!(mask.neighbors(0), &[0, 1, 2]);
    }

    #[test]
    fn rejects_bad_neighbor_count() {
        let y = labels(&[&[0], &[1]], 2);
        assert!(build_neighbor_mask(&y, 0).is_err());
        assert!(build_neighbor_mask(&y, 2).is_err());
    }

    #[test]
    fn from_rows_requires_diagonal() {
        assert!(NeighborMask::from_rows(2, vec![vec![(0, 1.0)], vec![(0, 1.0)]]).is_err());
        assert!(NeighborMask::from_rows(2, vec![vec![(0, 1.0)], vec![(0, 1.0), (1, 2.0)]]).is_ok());
    }
}
