//! Seeded property suite run by `rxml selftest`: manifold invariants,
//! finite-difference gradient checks, solver cross-checks and metric identities.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::global::GlobalProblem;
use crate::linalg::{DenseMatrix, SparseRowMatrix};
use crate::local::{masked_gradient, masked_objective, solve_embedding_rcg, solve_embedding_svp, NeighborMask};
use crate::manifold::fixed_rank::{project_to_tangent, retract, vector_transport};
use crate::manifold::psd::{metric_psd, project_horizontal, retract_psd, transport_psd};
use crate::manifold::{FixedRank, FixedRankPoint, Geometry, PsdPoint};
use crate::metrics::{ndcg_at_k, precision_at_k};
use crate::pipeline::derive_seed;
use crate::rcg::{rcg_minimize, RcgConfig};

#[derive(Clone, Debug, Default)]
pub struct SelftestOptions {
    /// Runs only checks whose group or name contains this string.
    pub filter: Option<String>,
    pub seed: u64,
    /// Perturbs every analytic gradient by a relative 1e-3 so the gradient
    /// checks must fail. Used to test the suite itself.
    pub inject_gradient_bug: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub group: &'static str,
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest error measure seen across trials.
    pub worst: f64,
    pub tolerance: f64,
    pub secs: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:<34} {:>6} {:>6} {:>10} {:>10}  result",
            "group", "check", "trials", "fails", "worst", "tol"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<10} {:<34} {:>6} {:>6} {:>10.2e} {:>10.1e}  {}",
                c.group,
                c.name,
                c.trials,
                c.failures,
                c.worst,
                c.tolerance,
                if c.passed() { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

type Trial = fn(&mut ChaCha8Rng, &SelftestOptions) -> f64;

struct Check {
    group: &'static str,
    name: &'static str,
    trials: usize,
    tolerance: f64,
    trial: Trial,
}

const CHECKS: &[Check] = &[
    Check {
        group: "manifold",
        name: "fixed_rank.projection_idempotent",
        trials: 100,
        tolerance: 1e-10,
        trial: fr_projection_idempotent,
    },
    Check {
        group: "manifold",
        name: "fixed_rank.transport_is_tangent",
        trials: 100,
        tolerance: 1e-9,
        trial: fr_transport_tangent,
    },
    Check {
        group: "manifold",
        name: "fixed_rank.metric_symmetric",
        trials: 100,
        tolerance: 1e-12,
        trial: fr_metric_symmetric,
    },
    Check {
        group: "manifold",
        name: "fixed_rank.retraction_second_order",
        trials: 100,
        tolerance: 0.2,
        trial: fr_retraction_order,
    },
    Check {
        group: "manifold",
        name: "psd.projection_idempotent",
        trials: 100,
        tolerance: 1e-9,
        trial: psd_projection_idempotent,
    },
    Check {
        group: "manifold",
        name: "psd.horizontal_symmetry",
        trials: 100,
        tolerance: 1e-9,
        trial: psd_horizontal_symmetry,
    },
    Check {
        group: "manifold",
        name: "psd.transport_is_horizontal",
        trials: 100,
        tolerance: 1e-9,
        trial: psd_transport_horizontal,
    },
    Check {
        group: "manifold",
        name: "psd.quotient_invariance",
        trials: 100,
        tolerance: 1e-9,
        trial: psd_quotient_invariance,
    },
    Check {
        group: "gradient",
        name: "global.riemannian_gradient",
        trials: 50,
        tolerance: 1e-5,
        trial: grad_global,
    },
    Check {
        group: "gradient",
        name: "masked_gram.gradient",
        trials: 50,
        tolerance: 1e-5,
        trial: grad_masked,
    },
    Check {
        group: "oracle",
        name: "global.rcg_vs_closed_form",
        trials: 20,
        tolerance: 1e-6,
        trial: oracle_global,
    },
    Check {
        group: "oracle",
        name: "local.rcg_vs_svp",
        trials: 50,
        tolerance: 1e-3,
        trial: oracle_local,
    },
    Check {
        group: "metrics",
        name: "metrics.direct_formulas",
        trials: 1000,
        tolerance: 1e-12,
        trial: metrics_direct,
    },
];

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let selected = CHECKS.iter().enumerate().filter(|(_, c)| match &opts.filter {
        Some(f) => c.group.contains(f.as_str()) || c.name.contains(f.as_str()),
        None => true,
    });
    let checks = selected
        .map(|(index, check)| {
            let start = Instant::now();
            let errors: Vec<f64> = (0..check.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = derive_seed(derive_seed(opts.seed, index as u64), t as u64);
                    (check.trial)(&mut ChaCha8Rng::seed_from_u64(seed), opts)
                })
                .collect();
            CheckResult {
                group: check.group,
                name: check.name,
                trials: check.trials,
                failures: errors.iter().filter(|e| !(**e <= check.tolerance)).count(),
                worst: errors
                    .iter()
                    .cloned()
                    .fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) }),
                tolerance: check.tolerance,
                secs: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    SelftestReport { checks }
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn frob_dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn bug(opts: &SelftestOptions) -> f64 {
    if opts.inject_gradient_bug {
        1.0 + 1e-3
    } else {
        1.0
    }
}

fn fixed_rank_instance(rng: &mut ChaCha8Rng) -> FixedRankPoint {
    let (d, l) = (rng.random_range(2..12), rng.random_range(2..12));
    let r = rng.random_range(1..=d.min(l));
    FixedRankPoint::random(d, l, r, rng)
}

fn psd_instance(rng: &mut ChaCha8Rng) -> PsdPoint {
    let n = rng.random_range(3..12);
    let r = rng.random_range(1..n);
    PsdPoint::new(randn(rng, n, r)).expect("Gaussian factors are full rank")
}

fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> SparseRowMatrix {
    let mut data = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = Vec::new();
        for j in 0..cols {
            if rng.random::<f64>() < density {
                row.push((j, rng.random_range(-1.0..1.0)));
            }
        }
        data.push(row);
    }
    SparseRowMatrix::from_rows(cols, data).expect("generated rows are valid")
}

fn fr_projection_idempotent(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let w = fixed_rank_instance(rng);
    let (d, l) = w.shape();
    let z = randn(rng, d, l);
    let once = project_to_tangent(&w, &z).unwrap().to_dense(&w);
    let twice = project_to_tangent(&w, &once).unwrap().to_dense(&w);
    (twice - &once).norm() / z.norm()
}

fn fr_transport_tangent(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let w = fixed_rank_instance(rng);
    let (d, l) = w.shape();
    let r = w.rank();
    let to = FixedRankPoint::random(d, l, r, rng);
    let xi = project_to_tangent(&w, &randn(rng, d, l)).unwrap();
    let moved = vector_transport(&w, &to, &xi);
    let up = (to.u().transpose() * &moved.up).norm() / moved.up.norm().max(1.0);
    let vp = (to.v().transpose() * &moved.vp).norm() / moved.vp.norm().max(1.0);
    up.max(vp)
}

fn fr_metric_symmetric(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let w = fixed_rank_instance(rng);
    let (d, l) = w.shape();
    let geom = FixedRank::new(d, l, w.rank()).unwrap();
    let a = project_to_tangent(&w, &randn(rng, d, l)).unwrap();
    let b = project_to_tangent(&w, &randn(rng, d, l)).unwrap();
    let ab = geom.inner(&w, &a, &b);
    let ba = geom.inner(&w, &b, &a);
    let aa = geom.inner(&w, &a, &a);
    // The metric is the ambient trace inner product of the represented matrices.
    let ambient = frob_dot(&a.to_dense(&w), &b.to_dense(&w));
    let scale = geom.norm(&w, &a) * geom.norm(&w, &b);
    if !(aa > 0.0) {
        return f64::INFINITY;
    }
    ((ab - ba).abs() + (ab - ambient).abs()) / scale
}

/// Deviation of the log-log slope of `‖R(t) − (W + tξ)‖` from 2.
fn fr_retraction_order(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let w = fixed_rank_instance(rng);
    let (d, l) = w.shape();
    let mut xi = project_to_tangent(&w, &randn(rng, d, l)).unwrap();
    let scale = 1.0 / xi.to_dense(&w).norm();
    xi = FixedRank::new(d, l, w.rank()).unwrap().scale(&w, scale, &xi);
    let wd = w.to_dense();
    let xd = xi.to_dense(&w);
    if (retract(&w, &xi, 0.0).unwrap().to_dense() - &wd).norm() != 0.0 {
        return f64::INFINITY;
    }
    let gap = |t: f64| (retract(&w, &xi, t).unwrap().to_dense() - &wd - &xd * t).norm();
    let (t1, t2) = (1e-2, 1e-3);
    let (g1, g2) = (gap(t1), gap(t2));
    if g1 < 1e-13 {
        // Flat direction: the retraction is exact to roundoff.
        return 0.0;
    }
    let slope = (g1.ln() - g2.ln()) / (t1.ln() - t2.ln());
    (slope - 2.0).abs()
}

fn psd_projection_idempotent(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let z = psd_instance(rng);
    let h = randn(rng, z.n(), z.r());
    let once = project_horizontal(&z, &h).unwrap();
    let twice = project_horizontal(&z, &once.u).unwrap();
    (twice.u - &once.u).norm() / h.norm()
}

fn psd_horizontal_symmetry(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let z = psd_instance(rng);
    let h = project_horizontal(&z, &randn(rng, z.n(), z.r())).unwrap();
    h.symmetry_residual(&z) / (h.u.norm() * z.z().norm())
}

fn psd_transport_horizontal(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let z = psd_instance(rng);
    let h = project_horizontal(&z, &randn(rng, z.n(), z.r())).unwrap();
    let to = retract_psd(&z, &h, 0.3).unwrap();
    let moved = transport_psd(&z, &to, &h).unwrap();
    let selfadj = {
        let a = project_horizontal(&z, &randn(rng, z.n(), z.r())).unwrap();
        let b = randn(rng, z.n(), z.r());
        let pb = project_horizontal(&z, &b).unwrap();
        // ⟨a, P b⟩ = ⟨a, b⟩ for horizontal a.
        (metric_psd(&z, &a, &pb) - frob_dot(&a.u, &b)).abs() / (a.u.norm() * b.norm())
    };
    (moved.symmetry_residual(&to) / (moved.u.norm() * to.z().norm()).max(f64::MIN_POSITIVE)).max(selfadj)
}

fn random_orthogonal(rng: &mut ChaCha8Rng, r: usize) -> DenseMatrix {
    randn(rng, r, r).qr().q()
}

fn psd_quotient_invariance(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let z = psd_instance(rng);
    let (n, r) = (z.n(), z.r());
    let per_row = rng.random_range(1..=n);
    let planted = randn(rng, n, r);
    let mask = random_mask(rng, n, per_row, &planted);
    let o = random_orthogonal(rng, r);
    let zo = PsdPoint::new(z.z() * &o).unwrap();
    let f = masked_objective(&mask, &z);
    let fo = masked_objective(&mask, &zo);
    let g = masked_gradient(&mask, &z).unwrap() * &o;
    let go = masked_gradient(&mask, &zo).unwrap();
    let value = (f - fo).abs() / f.max(1.0);
    value.max((go - &g).norm() / g.norm().max(1.0))
}

/// Each row observes itself and `per_row − 1` random others, with targets
/// from the planted factor `z`.
fn random_mask(rng: &mut ChaCha8Rng, n: usize, per_row: usize, z: &DenseMatrix) -> NeighborMask {
    let pattern: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut row: Vec<usize> = sample(rng, n - 1, per_row - 1)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .collect();
            row.push(i);
            row
        })
        .collect();
    NeighborMask::from_pattern_and_factor(&pattern, z).expect("pattern rows contain the diagonal")
}

fn grad_global(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> f64 {
    let (n, d, l) = (
        rng.random_range(5..30),
        rng.random_range(2..10),
        rng.random_range(2..10),
    );
    let r = rng.random_range(1..=d.min(l));
    let problem = GlobalProblem::new(random_sparse(rng, n, d, 0.5), random_sparse(rng, n, l, 0.5), r).unwrap();
    let w = FixedRankPoint::random(d, l, r, rng);
    let xi = project_to_tangent(&w, &randn(rng, d, l)).unwrap();
    let eps = 1e-6 * w.to_dense().norm() / xi.to_dense(&w).norm();
    let f = |t: f64| problem.objective(&retract(&w, &xi, t).unwrap());
    let fd = (f(eps) - f(-eps)) / (2.0 * eps);
    let analytic = problem.manifold().inner(&w, &problem.riemannian_gradient(&w), &xi) * bug(opts);
    rel_err(fd, analytic)
}

fn grad_masked(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> f64 {
    let n = rng.random_range(4..25);
    let r = rng.random_range(1..n.min(5));
    let per_row = rng.random_range(2..=n);
    let planted = randn(rng, n, r);
    let mask = random_mask(rng, n, per_row, &planted);
    let z = randn(rng, n, r);
    let mut h = randn(rng, n, r);
    h /= h.norm();
    let eps = 1e-6 * z.norm().max(1.0);
    let f = |t: f64| masked_objective(&mask, &PsdPoint::new(&z + &h * t).unwrap());
    let fd = (f(eps) - f(-eps)) / (2.0 * eps);
    let analytic = frob_dot(&masked_gradient(&mask, &PsdPoint::new(z.clone()).unwrap()).unwrap(), &h) * bug(opts);
    rel_err(fd, analytic)
}

fn oracle_global(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let (n, d, l) = (
        rng.random_range(20..60),
        rng.random_range(4..20),
        rng.random_range(3..15),
    );
    let r = rng.random_range(1..=d.min(l).min(4));
    let problem = GlobalProblem::new(random_sparse(rng, n, d, 0.4), random_sparse(rng, n, l, 0.3), r).unwrap();
    let best = problem.objective(&problem.closed_form().unwrap());
    let cfg = RcgConfig {
        max_iters: 2000,
        grad_tol: 1e-12,
        ..RcgConfig::default()
    };
    let x0 = FixedRankPoint::random(d, l, r, rng);
    let (_, trace) = rcg_minimize(&problem.manifold(), &problem, x0, &cfg).unwrap();
    (trace.final_objective() - best).abs() / best.max(f64::MIN_POSITIVE)
}

fn oracle_local(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let n = rng.random_range(20..50);
    let r = rng.random_range(1..=3);
    let per_row = rng.random_range((2 * r + 6)..=n.min(4 * r + 14));
    let planted = randn(rng, n, r);
    let mask = random_mask(rng, n, per_row, &planted);
    let target = mask.target_norm_sq();
    let cfg = RcgConfig {
        max_iters: 1000,
        grad_tol: 1e-12,
        ..RcgConfig::default()
    };
    let a = solve_embedding_rcg(&mask, r, &cfg, rng.random()).unwrap();
    let b = solve_embedding_svp(&mask, r, 1.5, 2000).unwrap();
    if a.final_objective > 1e-5 * target || b.final_objective > 1e-5 * target {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for (j, _) in mask.row(i) {
            let ga = a.z.row(i).dot(&a.z.row(j));
            let gb = b.z.row(i).dot(&b.z.row(j));
            worst = worst.max((ga - gb).abs());
        }
    }
    worst
}

/// Compares the metric implementations against the textbook formulas and
/// checks that nDCG@1 equals P@1.
fn metrics_direct(rng: &mut ChaCha8Rng, _: &SelftestOptions) -> f64 {
    let l = rng.random_range(1..40);
    let k = rng.random_range(1..=l.min(10));
    let (np, nt) = (rng.random_range(0..=l), rng.random_range(0..=l));
    let predicted: Vec<usize> = sample(rng, l, np).into_vec();
    let mut truth: Vec<usize> = sample(rng, l, nt).into_vec();
    truth.sort_unstable();
    let relevant = |label: &usize| truth.contains(label);
    let direct_p = predicted.iter().take(k).filter(|p| relevant(p)).count() as f64 / k as f64;
    let dcg: f64 = predicted
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, p)| relevant(p))
        .map(|(i, _)| 1.0 / (i as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..k.min(truth.len())).map(|i| 1.0 / (i as f64 + 2.0).log2()).sum();
    let direct_n = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    let p = precision_at_k(&predicted, &truth, k).unwrap();
    let n = ndcg_at_k(&predicted, &truth, k).unwrap();
    let p1 = precision_at_k(&predicted, &truth, 1).unwrap();
    let n1 = ndcg_at_k(&predicted, &truth, 1).unwrap();
    let identity = if p1 == n1 { 0.0 } else { 1.0 };
    (p - direct_p).abs().max((n - direct_n).abs()).max(identity)
}
