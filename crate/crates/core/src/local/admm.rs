//! Sparse linear regressor from features to embeddings,
//! `min_V ‖Z − X·Vᵀ‖² + λ‖V‖² + μ‖X·Vᵀ‖₁`, solved by ADMM.
//!
//! Rows are samples: `X` is ñ×d, `Z` is ñ×r and the returned `V` is r×d, so a
//! new point `x` embeds as `V·x`. The splitting variable is `Q = X·Vᵀ`; the
//! `V`-step is a ridge solve whose matrix is factored once, the `Q`-step is
//! elementwise soft thresholding at `μ/ρ`.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{soft_threshold, DenseMatrix, SparseRowMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            mu: 0.01,
            rho: 1.0,
            max_iters: 100,
            abs_tol: 1e-4,
            rel_tol: 1e-3,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.rho > 0.0 && self.mu >= 0.0) {
            return Err(Error::invalid(format!(
                "ADMM needs lambda > 0, rho > 0, mu ≥ 0 (got {}, {}, {})",
                self.lambda, self.rho, self.mu
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdmmResult {
    /// r×d.
    pub v: DenseMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
}

pub fn regression_objective(x: &SparseRowMatrix, z: &DenseMatrix, v: &DenseMatrix, lambda: f64, mu: f64) -> f64 {
    let pred = x.mul_dense(&v.transpose());
    (z - &pred).norm_squared() + lambda * v.norm_squared() + mu * pred.iter().map(|p| p.abs()).sum::<f64>()
}

/// `(XᵀX + c·I)⁻¹·Xᵀ·B`, factoring whichever of `XᵀX` and `XXᵀ` is smaller.
enum RidgeSolver {
    Primal(Cholesky<f64, nalgebra::Dyn>),
    Dual(Cholesky<f64, nalgebra::Dyn>),
}

impl RidgeSolver {
    fn new(x: &SparseRowMatrix, c: f64) -> Result<Self> {
        let singular = || Error::RankDeficient("ridge system is not positive definite".into());
        if x.cols() <= x.rows() {
            let mut g = x.gram();
            for i in 0..g.nrows() {
                g[(i, i)] += c;
            }
            Ok(Self::Primal(g.cholesky().ok_or_else(singular)?))
        } else {
            let mut g = x.outer_gram();
            for i in 0..g.nrows() {
                g[(i, i)] += c;
            }
            Ok(Self::Dual(g.cholesky().ok_or_else(singular)?))
        }
    }

    /// Returns `W` (d×r) for right-hand side `B` (ñ×r).
    fn solve(&self, x: &SparseRowMatrix, b: &DenseMatrix) -> DenseMatrix {
        match self {
            Self::Primal(ch) => ch.solve(&x.transpose_mul_dense(b)),
            Self::Dual(ch) => x.transpose_mul_dense(&ch.solve(b)),
        }
    }
}

pub fn train_regressor_admm(x: &SparseRowMatrix, z: &DenseMatrix, cfg: &AdmmConfig) -> Result<DenseMatrix> {
    Ok(train_regressor_admm_detailed(x, z, cfg)?.v)
}

pub fn train_regressor_admm_detailed(x: &SparseRowMatrix, z: &DenseMatrix, cfg: &AdmmConfig) -> Result<AdmmResult> {
    cfg.validate()?;
    if x.rows() != z.nrows() {
        return Err(Error::invalid(format!(
            "features have {} rows but embeddings have {}",
            x.rows(),
            z.nrows()
        )));
    }
    let (n, d, r) = (x.rows(), x.cols(), z.ncols());
    let rho = cfg.rho;
    // ∂/∂W: (2 + ρ)·XᵀX·W + 2λ·W = Xᵀ·(2Z + ρ(Q − U))
    let solver = RidgeSolver::new(x, 2.0 * cfg.lambda / (2.0 + rho))?;
    let threshold = cfg.mu / rho;

    let mut q = DenseMatrix::zeros(n, r);
    let mut u = DenseMatrix::zeros(n, r);
    let mut w = DenseMatrix::zeros(d, r);
    let mut primal_residuals = Vec::new();
    let mut dual_residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let rhs = (z * 2.0 + (&q - &u) * rho) / (2.0 + rho);
        w = solver.solve(x, &rhs);
        let xw = x.mul_dense(&w);
        let q_old = std::mem::replace(&mut q, (&xw + &u).map(|v| soft_threshold(v, threshold)));
        let primal = &xw - &q;
        u += &primal;

        let primal_norm = primal.norm();
        let dual_norm = rho * x.transpose_mul_dense(&(&q - &q_old)).norm();
        primal_residuals.push(primal_norm);
        dual_residuals.push(dual_norm);
        let eps_pri = ((n * r) as f64).sqrt() * cfg.abs_tol + cfg.rel_tol * xw.norm().max(q.norm());
        let eps_dual = ((d * r) as f64).sqrt() * cfg.abs_tol + cfg.rel_tol * rho * x.transpose_mul_dense(&u).norm();
        if primal_norm <= eps_pri && dual_norm <= eps_dual {
            converged = true;
            break;
        }
    }
    Ok(AdmmResult {
        v: w.transpose(),
        iterations,
        converged,
        primal_residuals,
        dual_residuals,
    })
}
