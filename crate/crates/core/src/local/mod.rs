//! Per-cluster local embedding: the neighbor mask, the masked Gram objective
//! on `S_+(n, r)`, its RCG and SVP solvers, and the sparse ADMM regressor.

mod admm;
mod mask;
mod svp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use admm::{regression_objective, train_regressor_admm, train_regressor_admm_detailed, AdmmConfig, AdmmResult};
pub use mask::{build_neighbor_mask, NeighborMask};
pub use svp::{solve_embedding_svp, solve_embedding_svp_from, SVP_DEFAULT_ETA};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::manifold::psd::riemannian_gradient_psd;
use crate::manifold::{HorizontalVector, PsdFixedRank, PsdPoint};
use crate::rcg::{rcg_minimize, regularized_objective, Objective, RcgConfig, RcgTrace};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingResult {
    /// Embeddings, one row per cluster member (ñ×r).
    pub z: DenseMatrix,
    pub final_objective: f64,
    pub trace: RcgTrace,
    /// Number of nonzero columns of `z`; below `r` only when SVP ran out of
    /// positive eigenvalues.
    pub effective_rank: usize,
    pub notes: Vec<String>,
}

/// `Σ_{(i,j)∈Ω} (target_ij − z_iᵀ·z_j)²` for a factor of any width.
pub(crate) fn masked_objective_factor(mask: &NeighborMask, z: &DenseMatrix) -> f64 {
    let zt = z.transpose();
    let mut total = 0.0;
    for i in 0..mask.n() {
        let zi = zt.column(i);
        for (j, t) in mask.row(i) {
            let r = zi.dot(&zt.column(j)) - t;
            total += r * r;
        }
    }
    total
}

pub fn masked_objective(mask: &NeighborMask, z: &PsdPoint) -> f64 {
    masked_objective_factor(mask, z.z())
}

/// `2·(R + Rᵀ)·Z` where `R = P_Ω ⊙ (Z·Zᵀ − Y·Yᵀ)`, accumulated entry by entry.
pub(crate) fn masked_gradient_factor(mask: &NeighborMask, z: &DenseMatrix) -> DenseMatrix {
    let zt = z.transpose();
    let mut gt = DenseMatrix::zeros(z.ncols(), z.nrows());
    for i in 0..mask.n() {
        for (j, t) in mask.row(i) {
            let r = 2.0 * (zt.column(i).dot(&zt.column(j)) - t);
            gt.column_mut(i).axpy(r, &zt.column(j), 1.0);
            gt.column_mut(j).axpy(r, &zt.column(i), 1.0);
        }
    }
    gt.transpose()
}

pub fn masked_gradient(mask: &NeighborMask, z: &PsdPoint) -> Result<DenseMatrix> {
    if z.n() != mask.n() {
        return Err(Error::invalid(format!(
            "factor has {} rows, mask expects {}",
            z.n(),
            mask.n()
        )));
    }
    Ok(masked_gradient_factor(mask, z.z()))
}

/// The masked Gram objective as an [`Objective`] on `S_+(n, r)`.
pub struct MaskedGram<'a> {
    pub mask: &'a NeighborMask,
}

impl Objective<PsdFixedRank> for MaskedGram<'_> {
    fn cost(&self, x: &PsdPoint) -> f64 {
        masked_objective(self.mask, x)
    }

    fn gradient(&self, x: &PsdPoint) -> HorizontalVector {
        let egrad = masked_gradient_factor(self.mask, x.z());
        riemannian_gradient_psd(x, &egrad).expect("iterates are full rank")
    }
}

/// Seeded standard-normal rows scaled by `sqrt(mean diagonal target / r)`.
pub fn initial_embedding(mask: &NeighborMask, r: usize, seed: u64) -> DenseMatrix {
    let mean_diag = mask.mean_diagonal();
    let scale = if mean_diag > 0.0 {
        (mean_diag / r as f64).sqrt()
    } else {
        1.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(mask.n(), r, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn solve_embedding_rcg(mask: &NeighborMask, r: usize, cfg: &RcgConfig, seed: u64) -> Result<EmbeddingResult> {
    let n = mask.n();
    if r == 0 || r >= n {
        return Err(Error::invalid(format!(
            "embedding rank {r} must satisfy 1 ≤ r < n = {n}"
        )));
    }
    let geom = PsdFixedRank::new(n, r)?;
    let x0 = PsdPoint::new(initial_embedding(mask, r, seed))?;
    let obj = MaskedGram { mask };
    let (x, trace) = if cfg.regularizer_mu > 0.0 {
        let reg = regularized_objective(&geom, &obj, cfg.regularizer_mu);
        rcg_minimize(&geom, &reg, x0, cfg)?
    } else {
        rcg_minimize(&geom, &obj, x0, cfg)?
    };
    let final_objective = masked_objective(mask, &x);
    Ok(EmbeddingResult {
        z: x.into_inner(),
        final_objective,
        trace,
        effective_rank: r,
        notes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_objective() {
        let mask = NeighborMask::from_rows(1, vec![vec![(0, 2.0)]]).unwrap();
        let z = PsdPoint::new(DenseMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(masked_objective(&mask, &z), 1.0);
    }

    #[test]
    fn two_row_gradient_touches_only_the_pair() {
        let rows = vec![vec![(0, 0.0), (1, 1.0)], vec![(1, 0.0)], vec![(2, 0.0)]];
        let mask = NeighborMask::from_rows(3, rows).unwrap();
        let z = DenseMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 2.0, 3.0, 1.0]);
        // Zero out the diagonal contributions by matching targets exactly.
        let diag: Vec<f64> = (0..3).map(|i| z.row(i).norm_squared()).collect();
        let rows = vec![vec![(0, diag[0]), (1, 1.0)], vec![(1, diag[1])], vec![(2, diag[2])]];
        let mask2 = NeighborMask::from_rows(3, rows).unwrap();
        let g = masked_gradient_factor(&mask2, &z);
        let r01 = z.row(0).dot(&z.row(1)) - 1.0;
        assert!((g.row(0) - z.row(1) * (2.0 * r01)).norm() < 1e-14);
        assert!((g.row(1) - z.row(0) * (2.0 * r01)).norm() < 1e-14);
        assert_eq!(g.row(2).norm(), 0.0);
        assert_eq!(mask.nnz(), 4);
    }

    #[test]
    fn zero_iterations_return_initial_point() {
        let z = DenseMatrix::from_fn(8, 2, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
        let pattern: Vec<Vec<usize>> = (0..8)
            .map(|i| {
                (0..8)
                    .collect::<Vec<_>>()
                    .into_iter()
                    .filter(|&j| j == i || (i + j) % 3 == 0)
                    .collect()
            })
            .collect();
        let mask = NeighborMask::from_pattern_and_factor(&pattern, &z).unwrap();
        let cfg = RcgConfig {
            max_iters: 0,
            ..Default::default()
        };
        let res = solve_embedding_rcg(&mask, 2, &cfg, 5).unwrap();
        assert_eq!(res.z, initial_embedding(&mask, 2, 5));
        assert_eq!(res.final_objective, masked_objective_factor(&mask, &res.z));
        assert!(res.trace.records.is_empty());
    }

    #[test]
    fn rank_must_be_below_cluster_size() {
        let mask = NeighborMask::from_rows(2, vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        assert!(solve_embedding_rcg(&mask, 2, &RcgConfig::default(), 0).is_err());
    }
}
