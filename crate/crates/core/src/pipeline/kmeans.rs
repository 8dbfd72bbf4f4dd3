//! Lloyd's k-means on sparse rows with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{SparseRow, SparseRowMatrix};

pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    /// Dense centroids, one per cluster.
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl Partition {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(row: SparseRow<'_>, row_sq: f64, c: &[f64], c_sq: f64) -> f64 {
    (row_sq - 2.0 * row.dot_dense(c) + c_sq).max(0.0)
}

fn sq_norm(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum()
}

fn densify(row: SparseRow<'_>, d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d];
    for (j, v) in row.iter() {
        c[j] = v;
    }
    c
}

/// Index of the nearest centroid, lowest index on ties.
pub fn nearest_centroid(row: SparseRow<'_>, centroids: &[Vec<f64>], centroid_sq: &[f64]) -> (usize, f64) {
    let row_sq = row.sq_norm();
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, row_sq, c, centroid_sq[k]);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn seed_plus_plus(x: &SparseRowMatrix, c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let d = x.cols();
    let row_sq: Vec<f64> = x.row_iter().map(|r| r.sq_norm()).collect();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![densify(x.row(first), d)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), row_sq[i], &centroids[0], row_sq[first]))
        .collect();
    while centroids.len() < c {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| dist[i]).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                target -= dist[i];
                if target < 0.0 && dist[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && dist[i] > 0.0).unwrap())
        } else {
            (0..n).find(|&i| !chosen[i]).expect("C ≤ n leaves an unchosen row")
        };
        chosen[pick] = true;
        let centroid = densify(x.row(pick), d);
        let c_sq = row_sq[pick];
        for i in 0..n {
            dist[i] = dist[i].min(sq_dist(x.row(i), row_sq[i], &centroid, c_sq));
        }
        centroids.push(centroid);
    }
    centroids
}

fn recompute_centroids(x: &SparseRowMatrix, assignment: &[usize], c: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; x.cols()]; c];
    let mut counts = vec![0usize; c];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (j, v) in x.row(i).iter() {
            sums[a][j] += v;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            let inv = 1.0 / count as f64;
            sum.iter_mut().for_each(|v| *v *= inv);
        }
    }
    sums
}

/// Empty clusters take the point farthest from the centroid of the currently
/// largest cluster.
fn repair_empty(x: &SparseRowMatrix, assignment: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let c = centroids.len();
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; c];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repaired;
        };
        let largest = (0..c).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
        let c_sq = sq_norm(&centroids[largest]);
        let far = (0..assignment.len())
            .filter(|&i| assignment[i] == largest)
            .map(|i| (i, sq_dist(x.row(i), x.row(i).sq_norm(), &centroids[largest], c_sq)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        assignment[far] = empty;
        centroids[empty] = densify(x.row(far), x.cols());
        repaired = true;
    }
}

pub fn kmeans_partition(x: &SparseRowMatrix, c: usize, seed: u64) -> Result<Partition> {
    let n = x.rows();
    if c == 0 || c > n {
        return Err(Error::invalid(format!("cluster count {c} must lie in 1..={n}")));
    }
    if c == 1 {
        let assignment = vec![0; n];
        let centroids = recompute_centroids(x, &assignment, 1);
        return Ok(Partition {
            assignment,
            centroids,
            iterations: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(x, c, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let c_sq: Vec<f64> = centroids.iter().map(|c| sq_norm(c)).collect();
        let mut next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest_centroid(x.row(i), &centroids, &c_sq).0)
            .collect();
        let repaired = repair_empty(x, &mut next, &mut centroids);
        let unchanged = next == assignment;
        assignment = next;
        centroids = recompute_centroids(x, &assignment, c);
        if unchanged && !repaired {
            break;
        }
    }
    Ok(Partition {
        assignment,
        centroids,
        iterations,
    })
}
