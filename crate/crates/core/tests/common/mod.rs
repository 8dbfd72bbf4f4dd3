//! Instance generators and reference implementations shared by the
//! integration tests. The reference routines are written from their textbook
//! definitions and never call into the library's numerical kernels.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rxml_core::data_io::SparseDataset;
use rxml_core::linalg::{DenseMatrix, SparseRowMatrix};
use rxml_core::local::NeighborMask;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Gram-Schmidt on Gaussian columns.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DenseMatrix {
    let mut q = randn(rng, n, k);
    for j in 0..k {
        for i in 0..j {
            let proj: f64 = (0..n).map(|t| q[(t, i)] * q[(t, j)]).sum();
            for t in 0..n {
                q[(t, j)] -= proj * q[(t, i)];
            }
        }
        let norm: f64 = (0..n).map(|t| q[(t, j)] * q[(t, j)]).sum::<f64>().sqrt();
        for t in 0..n {
            q[(t, j)] /= norm;
        }
    }
    q
}

pub fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> SparseRowMatrix {
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
    SparseRowMatrix::from_rows(cols, data).unwrap()
}

pub fn frob_dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Each row observes itself and `per_row − 1` random others; targets are the
/// inner products of a random rank-`r` factor.
pub fn planted_completion(rng: &mut ChaCha8Rng, n: usize, r: usize, per_row: usize) -> (NeighborMask, DenseMatrix) {
    let z = randn(rng, n, r);
    let pattern: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut row: Vec<usize> = sample(rng, n - 1, per_row - 1)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .collect();
            row.push(i);
            row.sort_unstable();
            row
        })
        .collect();
    (NeighborMask::from_pattern_and_factor(&pattern, &z).unwrap(), z)
}

/// Dense `P_Ω ⊙ (Z·Zᵀ − T)` built entry by entry.
pub fn dense_masked_residual(mask: &NeighborMask, z: &DenseMatrix) -> DenseMatrix {
    let n = mask.n();
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, t) in mask.row(i) {
            let mut ip = 0.0;
            for c in 0..z.ncols() {
                ip += z[(i, c)] * z[(j, c)];
            }
            r[(i, j)] = ip - t;
        }
    }
    r
}

/// Three label groups of `per_group` points each. Every point of a group carries the same
/// label set and the same one-hot group feature, so embeddings are linear in
/// the features. The label sets {0}, {1}, {0, 1} give a rank-2 label Gram.
pub fn realizable_dataset(per_group: usize) -> SparseDataset {
    let label_sets: [&[usize]; 3] = [&[0], &[1], &[0, 1]];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (g, labels) in label_sets.iter().enumerate() {
        for _ in 0..per_group {
            x.push(vec![(g, 1.0)]);
            y.push(labels.iter().map(|&l| (l, 1.0)).collect());
        }
    }
    SparseDataset::new(
        SparseRowMatrix::from_rows(label_sets.len(), x).unwrap(),
        SparseRowMatrix::from_rows(2, y).unwrap(),
        "realizable",
    )
    .unwrap()
}

/// Random multi-label data: labels depend on which of `centers` random sparse
/// prototypes a point was drawn near.
pub fn clustered_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, l: usize, centers: usize) -> SparseDataset {
    let protos: Vec<Vec<(usize, f64)>> = (0..centers)
        .map(|_| {
            let mut idx: Vec<usize> = sample(rng, d, (d / 4).max(1)).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| (j, rng.random_range(0.5..1.5))).collect()
        })
        .collect();
    let proto_labels: Vec<Vec<usize>> = (0..centers)
        .map(|_| {
            let mut idx: Vec<usize> = sample(rng, l, 3.min(l)).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let c = rng.random_range(0..centers);
        xs.push(
            protos[c]
                .iter()
                .map(|&(j, v)| (j, v + 0.1 * rng.sample::<f64, _>(StandardNormal)))
                .collect(),
        );
        let mut labels = proto_labels[c].clone();
        if rng.random::<f64>() < 0.3 {
            labels.push(rng.random_range(0..l));
            labels.sort_unstable();
            labels.dedup();
        }
        ys.push(labels.into_iter().map(|j| (j, 1.0)).collect());
    }
    SparseDataset::new(
        SparseRowMatrix::from_rows(d, xs).unwrap(),
        SparseRowMatrix::from_rows(l, ys).unwrap(),
        "clustered",
    )
    .unwrap()
}

/// One-sided Jacobi SVD. Returns `(U, s, V)` with `s` descending and all
/// min(m, n) triplets.
pub fn jacobi_svd(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    let transpose = a.nrows() < a.ncols();
    let mut u = if transpose { a.transpose() } else { a.clone() };
    let (m, n) = u.shape();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[(i, p)], u[(i, q)]);
                    u[(i, p)] = c * x - s * y;
                    u[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<(f64, usize)> = (0..n)
        .map(|j| ((0..m).map(|i| u[(i, j)] * u[(i, j)]).sum::<f64>().sqrt(), j))
        .collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut uu = DMatrix::zeros(m, n);
    let mut vv = DMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(sigma, j)) in sv.iter().enumerate() {
        s.push(sigma);
        for i in 0..m {
            uu[(i, k)] = if sigma > 0.0 { u[(i, j)] / sigma } else { 0.0 };
        }
        for i in 0..n {
            vv[(i, k)] = v[(i, j)];
        }
    }
    if transpose {
        (vv, s, uu)
    } else {
        (uu, s, vv)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix, eigenvalues
/// descending.
pub fn jacobi_eig(a: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() < 1e-14 * m.norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (x, y) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * x - s * y;
                    m[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * x - s * y;
                    m[(q, k)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[(b, b)].total_cmp(&m[(a, a)]));
    let vals = order.iter().map(|&i| m[(i, i)]).collect();
    let vecs = DMatrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    (vals, vecs)
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: DenseMatrix, mut b: Vec<f64>) -> Vec<f64> {
    let n = a.nrows();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[(row, col)] / a[(col, col)];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[(row, k)] -= f * a[(col, k)];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[(row, k)] * x[k]).sum();
        x[row] = (b[row] - s) / a[(row, row)];
    }
    x
}

/// Solves `E·S + S·E = C` through the Kronecker system
/// `(Sᵀ ⊗ I + I ⊗ S)·vec(E) = vec(C)`.
pub fn kronecker_sylvester(s: &DenseMatrix, c: &DenseMatrix) -> DenseMatrix {
    let r = s.nrows();
    let mut k = DMatrix::zeros(r * r, r * r);
    // vec index of (i, j) is j·r + i (column stacking).
    for i in 0..r {
        for j in 0..r {
            let row = j * r + i;
            for t in 0..r {
                // (E·S)_ij = Σ_t E_it S_tj
                k[(row, t * r + i)] += s[(t, j)];
                // (S·E)_ij = Σ_t S_it E_tj
                k[(row, j * r + t)] += s[(i, t)];
            }
        }
    }
    let rhs: Vec<f64> = (0..r * r).map(|idx| c[(idx % r, idx / r)]).collect();
    let sol = gauss_solve(k, rhs);
    DMatrix::from_fn(r, r, |i, j| sol[j * r + i])
}

/// Reference neighbor sets: for each row, itself first, then the `nbar − 1`
/// other rows with the largest label inner product (lower index on ties),
/// found by scanning every pair.
pub fn brute_force_neighbors(y: &SparseRowMatrix, nbar: usize) -> Vec<Vec<usize>> {
    let dense = y.to_dense();
    let n = dense.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((0..dense.ncols()).map(|c| dense[(i, c)] * dense[(j, c)]).sum(), j))
                .collect();
            others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut row: Vec<usize> = others.into_iter().take(nbar - 1).map(|p| p.1).collect();
            row.push(i);
            row.sort_unstable();
            row
        })
        .collect()
}

/// Reference P@k: counts hits with a linear scan.
pub fn direct_precision(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for p in pred.iter().take(k) {
        if truth.iter().any(|t| t == p) {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

/// Reference nDCG@k written from the definition.
pub fn direct_ndcg(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (i, p) in pred.iter().take(k).enumerate() {
        if truth.contains(p) {
            dcg += 1.0 / (i as f64 + 2.0).ln() * std::f64::consts::LN_2;
        }
    }
    let mut idcg = 0.0;
    for i in 0..k.min(truth.len()) {
        idcg += 1.0 / (i as f64 + 2.0).ln() * std::f64::consts::LN_2;
    }
    dcg / idcg
}
