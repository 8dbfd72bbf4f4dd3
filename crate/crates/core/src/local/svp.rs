//! Singular value projection: projected gradient descent onto rank-r PSD
//! matrices, keeping the iterate as a factor `M = Z·Zᵀ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{masked_objective_factor, EmbeddingResult, NeighborMask};
use crate::error::{Error, Result};
use crate::linalg::{at_mul, thin_qr, truncated_sym_eig, DenseMatrix};
use crate::rcg::{IterRecord, RcgTrace, Termination};

pub const SVP_DEFAULT_ETA: f64 = 0.5;

const REL_TOL: f64 = 1e-8;
/// Objective, relative to the squared target norm, treated as an exact fit.
const FIT_TOL: f64 = 1e-24;
const MAX_RESTARTS: usize = 5;
/// Above this cluster size the eigenproblem is solved by subspace iteration.
const DENSE_EIG_LIMIT: usize = 600;

pub fn solve_embedding_svp(mask: &NeighborMask, r: usize, eta: f64, max_iters: usize) -> Result<EmbeddingResult> {
    solve_embedding_svp_from(mask, r, eta, max_iters, None)
}

/// Runs SVP from `z0` (the zero matrix when `None`). Halves `eta` and restarts
/// whenever the objective exceeds ten times its starting value.
pub fn solve_embedding_svp_from(
    mask: &NeighborMask,
    r: usize,
    eta: f64,
    max_iters: usize,
    z0: Option<&DenseMatrix>,
) -> Result<EmbeddingResult> {
    let n = mask.n();
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("SVP step size must be positive, got {eta}")));
    }
    if r == 0 || r > n {
        return Err(Error::invalid(format!("embedding rank {r} must lie in 1..={n}")));
    }
    if let Some(z) = z0 {
        if z.nrows() != n || z.ncols() > r {
            return Err(Error::invalid("SVP starting factor has the wrong shape"));
        }
    }
    let start = z0.cloned().unwrap_or_else(|| DenseMatrix::zeros(n, 0));
    let mut eta = eta;
    let mut notes = Vec::new();
    for restart in 0..=MAX_RESTARTS {
        match run(mask, r, eta, max_iters, &start) {
            Some((z, trace)) => {
                if restart > 0 {
                    notes.push(format!("step size halved {restart} time(s) to {eta}"));
                }
                let effective_rank = z.ncols();
                let mut padded = DenseMatrix::zeros(n, r);
                padded.columns_mut(0, effective_rank).copy_from(&z);
                if effective_rank < r {
                    notes.push(format!(
                        "only {effective_rank} positive eigenvalues; padded to rank {r} with zero columns"
                    ));
                }
                return Ok(EmbeddingResult {
                    final_objective: masked_objective_factor(mask, &padded),
                    z: padded,
                    trace,
                    effective_rank,
                    notes,
                });
            }
            None => eta *= 0.5,
        }
    }
    Err(Error::Divergence(format!(
        "SVP diverged after {MAX_RESTARTS} step-size halvings"
    )))
}

/// One SVP run; `None` signals divergence.
fn run(
    mask: &NeighborMask,
    r: usize,
    eta: f64,
    max_iters: usize,
    start: &DenseMatrix,
) -> Option<(DenseMatrix, RcgTrace)> {
    let mut z = start.clone();
    let f0 = masked_objective_factor(mask, &z);
    let mut f = f0;
    let fit_floor = FIT_TOL * mask.target_norm_sq();
    let mut trace = RcgTrace {
        initial_objective: f0,
        initial_grad_norm: f64::NAN,
        records: Vec::new(),
        termination: Termination::MaxIters,
    };
    for it in 0..max_iters {
        if f <= fit_floor {
            trace.termination = Termination::ObjectiveTol;
            break;
        }
        let step = SymmetricStep::new(mask, &z, eta);
        if it == 0 {
            trace.initial_grad_norm = step.residual_norm;
        }
        let (vals, vecs) = step.top_eigenpairs(r, it as u64);
        let keep = vals.iter().take_while(|&&v| v > 0.0).count();
        let mut next = DenseMatrix::zeros(mask.n(), keep);
        for (k, &val) in vals.iter().enumerate().take(keep) {
            next.column_mut(k).copy_from(&(vecs.column(k) * val.sqrt()));
        }
        let f_next = masked_objective_factor(mask, &next);
        if !f_next.is_finite() || f_next > 10.0 * f0.max(f64::MIN_POSITIVE) {
            return None;
        }
        trace.records.push(IterRecord {
            objective: f_next,
            grad_norm: step.residual_norm,
            step: eta,
            backtracks: 0,
            beta: 0.0,
            reset: false,
        });
        let rel_change = (f - f_next).abs() / f.max(f64::MIN_POSITIVE);
        z = next;
        f = f_next;
        if rel_change < REL_TOL {
            trace.termination = Termination::ObjectiveTol;
            break;
        }
    }
    Some((z, trace))
}

/// The symmetric matrix `Z·Zᵀ + η·sym(P_Ω(T − Z·Zᵀ))`, applied implicitly.
/// Projecting an asymmetric matrix onto the PSD cone only sees its symmetric part.
struct SymmetricStep<'a> {
    mask: &'a NeighborMask,
    z: &'a DenseMatrix,
    /// `η·(T − Z·Zᵀ)` on Ω, aligned with the mask entries.
    scaled_residual: Vec<f64>,
    residual_norm: f64,
}

impl<'a> SymmetricStep<'a> {
    fn new(mask: &'a NeighborMask, z: &'a DenseMatrix, eta: f64) -> Self {
        let zt = z.transpose();
        let mut scaled_residual = Vec::with_capacity(mask.nnz());
        let mut sq = 0.0;
        for i in 0..mask.n() {
            for (j, t) in mask.row(i) {
                let g = if z.ncols() == 0 {
                    t
                } else {
                    t - zt.column(i).dot(&zt.column(j))
                };
                sq += g * g;
                scaled_residual.push(eta * g);
            }
        }
        Self {
            mask,
            z,
            scaled_residual,
            residual_norm: sq.sqrt(),
        }
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.mask.n()).flat_map(move |i| {
            let lo = self.mask.indptr()[i];
            self.mask
                .neighbors(i)
                .iter()
                .enumerate()
                .map(move |(k, &j)| (i, j, self.scaled_residual[lo + k]))
        })
    }

    fn dense(&self) -> DenseMatrix {
        let mut a = self.z * self.z.transpose();
        for (i, j, v) in self.entries() {
            a[(i, j)] += 0.5 * v;
            a[(j, i)] += 0.5 * v;
        }
        a
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut out = if self.z.ncols() == 0 {
            DenseMatrix::zeros(x.nrows(), x.ncols())
        } else {
            self.z * at_mul(self.z, x)
        };
        for (i, j, v) in self.entries() {
            for c in 0..x.ncols() {
                out[(i, c)] += 0.5 * v * x[(j, c)];
                out[(j, c)] += 0.5 * v * x[(i, c)];
            }
        }
        out
    }

    /// Upper bound on the spectral radius of the sparse part.
    fn sparse_bound(&self) -> f64 {
        let mut row_sums = vec![0.0; self.mask.n()];
        for (i, j, v) in self.entries() {
            row_sums[i] += 0.5 * v.abs();
            row_sums[j] += 0.5 * v.abs();
        }
        row_sums.into_iter().fold(0.0, f64::max)
    }

    fn top_eigenpairs(&self, r: usize, seed: u64) -> (Vec<f64>, DenseMatrix) {
        let n = self.mask.n();
        if n <= DENSE_EIG_LIMIT {
            return truncated_sym_eig(&self.dense(), r).expect("SVP step matrix is symmetric and finite");
        }
        // Subspace iteration on A + c·I, c making the operator PSD so that the
        // dominant eigenvalues are the algebraically largest ones.
        let shift = self.sparse_bound();
        let block = (r + 10).min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f3759df);
        let mut q = DenseMatrix::from_fn(n, block, |_, _| rng.sample(StandardNormal));
        let warm = self.z.ncols().min(block);
        if warm > 0 {
            q.columns_mut(0, warm).copy_from(&self.z.columns(0, warm));
        }
        let mut basis = thin_qr(&q).0;
        for _ in 0..40 {
            let next = self.apply(&basis) + &basis * shift;
            basis = thin_qr(&next).0;
        }
        let small = at_mul(&basis, &self.apply(&basis));
        let small = (&small + small.transpose()) * 0.5;
        let (vals, vecs) = truncated_sym_eig(&small, r.min(block)).expect("projected matrix is symmetric");
        (vals, basis * vecs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_pattern(n: usize) -> Vec<Vec<usize>> {
        (0..n).map(|_| (0..n).collect()).collect()
    }

    #[test]
    fn planted_start_is_a_fixed_point() {
        let z = DenseMatrix::from_fn(6, 2, |i, j| {
            (i as f64 + 1.0) * if j == 0 { 1.0 } else { -0.5 } + j as f64
        });
        let mask = NeighborMask::from_pattern_and_factor(&dense_pattern(6), &z).unwrap();
        let res = solve_embedding_svp_from(&mask, 2, 0.7, 20, Some(&z)).unwrap();
        assert!(res.final_objective < 1e-20);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let mask = NeighborMask::from_rows(2, vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        assert!(solve_embedding_svp(&mask, 1, 0.0, 10).is_err());
    }
}
