//! Rank-constrained least squares `min_{rank W = r} ‖X·W − Y‖²_F` over the
//! fixed-rank manifold, plus its closed-form minimizer for verification.

use crate::error::{Error, Result};
use crate::linalg::{at_mul, thin_qr, thin_svd, DenseMatrix, SparseRowMatrix};
use crate::manifold::fixed_rank::{project_to_tangent, AmbientMatrix};
use crate::manifold::{FixedRank, FixedRankPoint, FixedRankTangent, RANK_EPS};
use crate::rcg::Objective;

/// Largest `n·d` for which the closed form is computed.
pub const CLOSED_FORM_LIMIT: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct GlobalProblem {
    pub x: SparseRowMatrix,
    pub y: SparseRowMatrix,
    pub r: usize,
}

impl GlobalProblem {
    pub fn new(x: SparseRowMatrix, y: SparseRowMatrix, r: usize) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::invalid(format!(
                "X has {} rows but Y has {}",
                x.rows(),
                y.rows()
            )));
        }
        if r == 0 || r > x.cols().min(y.cols()) {
            return Err(Error::invalid(format!(
                "rank {r} must lie in 1..={}",
                x.cols().min(y.cols())
            )));
        }
        Ok(Self { x, y, r })
    }

    pub fn manifold(&self) -> FixedRank {
        FixedRank {
            d: self.x.cols(),
            l: self.y.cols(),
            r: self.r,
        }
    }

    /// `‖X·W − Y‖²_F`, one residual row at a time.
    pub fn objective(&self, w: &FixedRankPoint) -> f64 {
        let xus = self.x.mul_dense(&w.u_scaled());
        let pred = xus * w.v().transpose();
        let mut total = 0.0;
        for i in 0..self.x.rows() {
            let mut row: Vec<f64> = pred.row(i).iter().copied().collect();
            for (j, v) in self.y.row(i).iter() {
                row[j] -= v;
            }
            total += row.iter().map(|e| e * e).sum::<f64>();
        }
        total
    }

    pub fn euclidean_gradient(&self, w: &FixedRankPoint) -> GlobalGradient<'_> {
        GlobalGradient {
            problem: self,
            xus: self.x.mul_dense(&w.u_scaled()),
            v: w.v().clone(),
        }
    }

    pub fn riemannian_gradient(&self, w: &FixedRankPoint) -> FixedRankTangent {
        project_to_tangent(w, &self.euclidean_gradient(w)).expect("gradient shape matches the point")
    }

    /// `W* = V_X·Σ_X⁻¹·M` with `M` the rank-r truncation of `U_Xᵀ·Y`.
    pub fn closed_form(&self) -> Result<FixedRankPoint> {
        let (n, d) = (self.x.rows(), self.x.cols());
        if n.saturating_mul(d) > CLOSED_FORM_LIMIT {
            return Err(Error::invalid(format!(
                "closed form limited to n·d ≤ {CLOSED_FORM_LIMIT}, got {n}×{d}"
            )));
        }
        if n < d {
            return Err(Error::RankDeficient(format!(
                "X is {n}×{d}; full column rank impossible"
            )));
        }
        let svd_x = thin_svd(&self.x.to_dense(), d)?;
        if !(svd_x.s[d - 1] > RANK_EPS * svd_x.s[0]) {
            return Err(Error::RankDeficient("X does not have full column rank".into()));
        }
        let uty = self.y.transpose_mul_dense(&svd_x.u).transpose();
        let m = thin_svd(&uty, self.r)?;
        if !(m.s[self.r - 1] > 0.0) {
            return Err(Error::RankDeficient(format!("U_Xᵀ·Y has rank below {}", self.r)));
        }
        let mut a = m.u.clone();
        for (j, &s) in m.s.iter().enumerate() {
            a.column_mut(j).scale_mut(s);
        }
        for i in 0..d {
            a.row_mut(i).scale_mut(1.0 / svd_x.s[i]);
        }
        let a = &svd_x.v * a;
        let (q, r) = thin_qr(&a);
        let core = thin_svd(&r, self.r)?;
        FixedRankPoint::new(q * core.u, core.s, m.v * core.v)
    }
}

impl Objective<FixedRank> for GlobalProblem {
    fn cost(&self, x: &FixedRankPoint) -> f64 {
        self.objective(x)
    }

    fn gradient(&self, x: &FixedRankPoint) -> FixedRankTangent {
        self.riemannian_gradient(x)
    }
}

/// `2·Xᵀ·(X·W − Y)` kept as sparse and thin dense factors.
pub struct GlobalGradient<'a> {
    problem: &'a GlobalProblem,
    /// `X·U·Σ` (n×r).
    xus: DenseMatrix,
    v: DenseMatrix,
}

impl AmbientMatrix for GlobalGradient<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.problem.x.cols(), self.problem.y.cols())
    }

    fn mul(&self, b: &DenseMatrix) -> DenseMatrix {
        let resid_b = &self.xus * at_mul(&self.v, b) - self.problem.y.mul_dense(b);
        self.problem.x.transpose_mul_dense(&resid_b) * 2.0
    }

    fn tmul(&self, b: &DenseMatrix) -> DenseMatrix {
        let xb = self.problem.x.mul_dense(b);
        (&self.v * at_mul(&self.xus, &xb) - self.problem.y.transpose_mul_dense(&xb)) * 2.0
    }
}

impl GlobalGradient<'_> {
    pub fn to_dense(&self) -> DenseMatrix {
        let l = self.problem.y.cols();
        self.mul(&DenseMatrix::identity(l, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dense_sparse(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> SparseRowMatrix {
        SparseRowMatrix::from_dense(&DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)))
    }

    #[test]
    fn exact_fit_has_zero_objective_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = dense_sparse(15, 6, &mut rng);
        let w0 = FixedRankPoint::random(6, 5, 2, &mut rng);
        let y = SparseRowMatrix::from_dense(&(x.to_dense() * w0.to_dense()));
        let p = GlobalProblem::new(x, y, 2).unwrap();
        assert!(p.objective(&w0) < 1e-24);
        assert!(p.euclidean_gradient(&w0).to_dense().norm() < 1e-12);
    }

    #[test]
    fn zero_features_give_label_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let y = dense_sparse(4, 3, &mut rng);
        let p = GlobalProblem::new(SparseRowMatrix::zeros(4, 5), y.clone(), 2).unwrap();
        let w = FixedRankPoint::random(5, 3, 2, &mut rng);
        assert!((p.objective(&w) - y.frobenius_sq()).abs() < 1e-12);
    }

    #[test]
    fn identity_features_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = SparseRowMatrix::from_dense(&DenseMatrix::identity(5, 5));
        let y = dense_sparse(5, 4, &mut rng);
        let p = GlobalProblem::new(x, y.clone(), 2).unwrap();
        let w = FixedRankPoint::random(5, 4, 2, &mut rng);
        let expected = (w.to_dense() - y.to_dense()) * 2.0;
        assert!((p.euclidean_gradient(&w).to_dense() - expected).norm() < 1e-12);
    }

    #[test]
    fn closed_form_identity_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let y = FixedRankPoint::random(6, 4, 2, &mut rng).to_dense();
        let p = GlobalProblem::new(
            SparseRowMatrix::from_dense(&DenseMatrix::identity(6, 6)),
            SparseRowMatrix::from_dense(&y),
            2,
        )
        .unwrap();
        let w = p.closed_form().unwrap();
        assert!((w.to_dense() - y).norm() < 1e-12);
    }

    #[test]
    fn closed_form_rejects_rank_deficient_features() {
        let x = SparseRowMatrix::from_dense(&DenseMatrix::from_fn(6, 3, |i, j| {
            if j == 2 {
                0.0
            } else {
                (i + j) as f64 + 1.0
            }
        }));
        let y = SparseRowMatrix::from_dense(&DenseMatrix::from_fn(6, 2, |i, j| (i * j) as f64 + 1.0));
        let p = GlobalProblem::new(x, y, 1).unwrap();
        assert!(matches!(p.closed_form(), Err(Error::RankDeficient(_))));
    }
}
