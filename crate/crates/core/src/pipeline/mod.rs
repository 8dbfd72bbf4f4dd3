//! Ensemble training and nearest-neighbor prediction.
//!
//! Each learner clusters the training set with its own k-means seed. Inside a
//! cluster the label Gram matrix is completed on a neighbor mask, a sparse
//! regressor maps features to the embedding, and the stored embeddings are the
//! regressor outputs. Prediction embeds a query in its nearest cluster, sums
//! the label rows of its nearest embedded neighbors and averages over learners.

mod kmeans;

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans_partition, nearest_centroid, Partition, KMEANS_MAX_ITERS};

use crate::data_io::SparseDataset;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseRow, SparseRowMatrix};
use crate::local::{
    build_neighbor_mask, masked_objective_factor, solve_embedding_rcg, solve_embedding_svp,
    train_regressor_admm_detailed, AdmmConfig, EmbeddingResult, SVP_DEFAULT_ETA,
};
use crate::rcg::{RcgConfig, RcgTrace, Termination};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSolver {
    #[default]
    Rcg,
    Svp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Embedding dimension.
    pub r: usize,
    /// Neighbors per point in the training mask, the point itself included.
    pub nbar: usize,
    /// Neighbors consulted at prediction time.
    pub predict_nbar: usize,
    pub clusters: usize,
    pub num_learners: usize,
    pub admm: AdmmConfig,
    pub rcg: RcgConfig,
    pub seed: u64,
    pub embedding_solver: EmbeddingSolver,
    pub svp_eta: f64,
    pub svp_max_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            r: 100,
            nbar: 15,
            predict_nbar: 25,
            clusters: 1,
            num_learners: 5,
            admm: AdmmConfig::default(),
            rcg: RcgConfig::default(),
            seed: 0,
            embedding_solver: EmbeddingSolver::Rcg,
            svp_eta: SVP_DEFAULT_ETA,
            svp_max_iters: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("r", self.r),
            ("nbar", self.nbar),
            ("predict_nbar", self.predict_nbar),
            ("clusters", self.clusters),
            ("num_learners", self.num_learners),
        ] {
            if value == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.svp_eta > 0.0) {
            return Err(Error::invalid("svp_eta must be positive"));
        }
        self.admm.validate()?;
        self.rcg.validate()
    }
}

/// Cluster count, embedding dimension, learner count and RCG iteration budget
/// scaled to the training set size.
pub fn default_hyperparameters(n: usize) -> TrainConfig {
    let learners = if n < 20_000 {
        5
    } else if n < 100_000 {
        10
    } else {
        20
    };
    TrainConfig {
        r: if n < 100_000 { 100 } else { 50 },
        clusters: (n / 6000).max(1),
        num_learners: learners,
        rcg: RcgConfig {
            max_iters: 30,
            ..RcgConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    centroid: Vec<f64>,
    /// r×d regressor.
    v: DenseMatrix,
    /// ñ×r stored embeddings.
    z: DenseMatrix,
    member_labels: SparseRowMatrix,
    centroid_sq: f64,
    z_sq_norms: Vec<f64>,
}

impl ClusterModel {
    pub fn new(centroid: Vec<f64>, v: DenseMatrix, z: DenseMatrix, member_labels: SparseRowMatrix) -> Result<Self> {
        if v.ncols() != centroid.len() || z.ncols() != v.nrows() || z.nrows() != member_labels.rows() {
            return Err(Error::invalid(format!(
                "inconsistent cluster shapes: centroid {}, V {}×{}, Z {}×{}, labels {}×{}",
                centroid.len(),
                v.nrows(),
                v.ncols(),
                z.nrows(),
                z.ncols(),
                member_labels.rows(),
                member_labels.cols()
            )));
        }
        if z.nrows() == 0 {
            return Err(Error::invalid("cluster has no members"));
        }
        let z_sq_norms = z.row_iter().map(|row| row.norm_squared()).collect();
        Ok(Self {
            centroid_sq: centroid.iter().map(|v| v * v).sum(),
            centroid,
            v,
            z,
            member_labels,
            z_sq_norms,
        })
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }

    pub fn member_labels(&self) -> &SparseRowMatrix {
        &self.member_labels
    }

    pub fn size(&self) -> usize {
        self.z.nrows()
    }

    pub fn rank(&self) -> usize {
        self.v.nrows()
    }

    /// `V·x`.
    pub fn embed(&self, x: SparseRow<'_>) -> nalgebra::DVector<f64> {
        let mut z = nalgebra::DVector::zeros(self.rank());
        for (j, value) in x.iter() {
            z.axpy(value, &self.v.column(j), 1.0);
        }
        z
    }

    /// Indices of the `k` stored embeddings nearest to `z`, closest first,
    /// lower index on ties.
    pub fn nearest_members(&self, z: &nalgebra::DVector<f64>, k: usize) -> Vec<usize> {
        let dots = &self.z * z;
        let dist: Vec<f64> = (0..self.size()).map(|i| self.z_sq_norms[i] - 2.0 * dots[i]).collect();
        let order = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
        let mut idx: Vec<usize> = (0..self.size()).collect();
        let k = k.min(idx.len());
        if k < idx.len() {
            idx.select_nth_unstable_by(k, order);
            idx.truncate(k);
        }
        idx.sort_unstable_by(order);
        idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetShape {
    pub n: usize,
    pub d: usize,
    pub l: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub learners: Vec<Vec<ClusterModel>>,
    pub shape: DatasetShape,
    pub config: TrainConfig,
    pub format_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub learner: usize,
    pub cluster: usize,
    pub size: usize,
    pub rank: usize,
    pub nbar: usize,
    pub target_norm_sq: f64,
    /// Masked objective of the solver's embedding.
    pub embedding_objective: f64,
    /// Masked objective after replacing the embedding with the regressor output.
    pub regressed_objective: f64,
    pub objective_trace: Vec<f64>,
    pub termination: Option<Termination>,
    pub admm_iterations: usize,
    pub admm_converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kmeans_iterations: Vec<usize>,
    pub clusters: Vec<ClusterReport>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}

pub fn train(dataset: &SparseDataset, cfg: &TrainConfig) -> Result<EnsembleModel> {
    Ok(train_with_report(dataset, cfg)?.0)
}

pub fn train_with_report(dataset: &SparseDataset, cfg: &TrainConfig) -> Result<(EnsembleModel, TrainReport)> {
    cfg.validate()?;
    let n = dataset.n();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.clusters > n {
        return Err(Error::invalid(format!(
            "{} clusters requested for {n} points",
            cfg.clusters
        )));
    }
    let learner_seeds: Vec<u64> = (0..cfg.num_learners as u64).map(|k| derive_seed(cfg.seed, k)).collect();
    let partitions: Vec<Partition> = learner_seeds
        .par_iter()
        .map(|&s| kmeans_partition(&dataset.x, cfg.clusters, derive_seed(s, 0)))
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize)> = (0..cfg.num_learners)
        .flat_map(|learner| (0..cfg.clusters).map(move |c| (learner, c)))
        .collect();
    let results: Vec<(ClusterModel, ClusterReport)> = tasks
        .par_iter()
        .map(|&(learner, cluster)| {
            let members = partitions[learner].members(cluster);
            let seed = derive_seed(learner_seeds[learner], cluster as u64 + 1);
            train_cluster(dataset, &members, cfg, seed).map(|(model, mut report)| {
                report.learner = learner;
                report.cluster = cluster;
                (model, report)
            })
        })
        .collect::<Result<_>>()?;

    let mut learners: Vec<Vec<ClusterModel>> = vec![Vec::with_capacity(cfg.clusters); cfg.num_learners];
    let mut report = TrainReport {
        kmeans_iterations: partitions.iter().map(|p| p.iterations).collect(),
        clusters: Vec::with_capacity(results.len()),
    };
    for ((learner, _), (model, cluster_report)) in tasks.into_iter().zip(results) {
        for w in &cluster_report.warnings {
            warn!("learner {learner} cluster {}: {w}", cluster_report.cluster);
        }
        learners[learner].push(model);
        report.clusters.push(cluster_report);
    }
    let model = EnsembleModel {
        learners,
        shape: DatasetShape {
            n,
            d: dataset.d(),
            l: dataset.l(),
        },
        config: cfg.clone(),
        format_version: MODEL_FORMAT_VERSION,
    };
    Ok((model, report))
}

/// Trains one cluster on the rows `members` of `dataset`.
pub fn train_cluster(
    dataset: &SparseDataset,
    members: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ClusterModel, ClusterReport)> {
    let size = members.len();
    let x = dataset.x.select_rows(members);
    let y = dataset.y.select_rows(members);
    let mut warnings = Vec::new();

    let rank = if size > cfg.r {
        cfg.r
    } else {
        let reduced = size.saturating_sub(1).max(1);
        warnings.push(format!(
            "cluster of {size} points trained with rank {reduced} instead of {}",
            cfg.r
        ));
        reduced
    };
    let nbar = if size == 1 {
        1
    } else if cfg.nbar >= size {
        warnings.push(format!("neighbor count clamped from {} to {}", cfg.nbar, size - 1));
        size - 1
    } else {
        cfg.nbar
    };
    let mask = build_neighbor_mask(&y, nbar)?;
    let target_norm_sq = mask.target_norm_sq();

    let embedding = if size == 1 {
        let t = mask.targets()[0].max(0.0);
        EmbeddingResult {
            z: DenseMatrix::from_element(1, 1, t.sqrt()),
            final_objective: 0.0,
            trace: RcgTrace {
                initial_objective: 0.0,
                initial_grad_norm: 0.0,
                records: Vec::new(),
                termination: Termination::GradTol,
            },
            effective_rank: 1,
            notes: Vec::new(),
        }
    } else {
        match cfg.embedding_solver {
            EmbeddingSolver::Rcg => solve_embedding_rcg(&mask, rank, &cfg.rcg, seed)?,
            EmbeddingSolver::Svp => solve_embedding_svp(&mask, rank, cfg.svp_eta, cfg.svp_max_iters)?,
        }
    };
    warnings.extend(embedding.notes.iter().cloned());

    let admm = train_regressor_admm_detailed(&x, &embedding.z, &cfg.admm)?;
    let z = x.mul_dense(&admm.v.transpose());
    let regressed_objective = masked_objective_factor(&mask, &z);
    let centroid = {
        let mut c = vec![0.0; x.cols()];
        for row in x.row_iter() {
            for (j, v) in row.iter() {
                c[j] += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= size as f64);
        c
    };

    let mut objective_trace = vec![embedding.trace.initial_objective];
    objective_trace.extend(embedding.trace.records.iter().map(|r| r.objective));
    let report = ClusterReport {
        learner: 0,
        cluster: 0,
        size,
        rank,
        nbar,
        target_norm_sq,
        embedding_objective: embedding.final_objective,
        regressed_objective,
        objective_trace,
        termination: Some(embedding.trace.termination),
        admm_iterations: admm.iterations,
        admm_converged: admm.converged,
        warnings,
    };
    Ok((ClusterModel::new(centroid, admm.v, z, y)?, report))
}

fn check_query(model: &EnsembleModel, x: SparseRow<'_>) -> Result<()> {
    match x.indices.last() {
        Some(&j) if j >= model.shape.d => Err(Error::invalid(format!(
            "feature index {j} out of range for a model with d = {}",
            model.shape.d
        ))),
        _ => Ok(()),
    }
}

/// Ensemble label scores for one point, as sorted `(label, score)` pairs with
/// nonzero score.
pub fn predict_scores(model: &EnsembleModel, x: SparseRow<'_>, nbar: usize) -> Result<Vec<(usize, f64)>> {
    check_query(model, x)?;
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    let row_sq = x.sq_norm();
    for clusters in &model.learners {
        let nearest = clusters
            .iter()
            .enumerate()
            .map(|(k, c)| (k, row_sq - 2.0 * x.dot_dense(&c.centroid) + c.centroid_sq))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        let cluster = &clusters[nearest];
        let z = cluster.embed(x);
        for i in cluster.nearest_members(&z, nbar.max(1)) {
            for (label, v) in cluster.member_labels.row(i).iter() {
                *scores.entry(label).or_insert(0.0) += v;
            }
        }
    }
    let learners = model.learners.len() as f64;
    Ok(scores.into_iter().map(|(label, s)| (label, s / learners)).collect())
}

/// Top `p` labels by ensemble score, lower label index first on ties.
pub fn predict(model: &EnsembleModel, x: SparseRow<'_>, nbar: usize, p: usize) -> Result<Vec<(usize, f64)>> {
    let mut scores = predict_scores(model, x, nbar)?;
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.truncate(p);
    Ok(scores)
}

pub fn predict_batch(
    model: &EnsembleModel,
    x: &SparseRowMatrix,
    nbar: usize,
    p: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if x.cols() != model.shape.d {
        return Err(Error::invalid(format!(
            "queries have {} features, model expects {}",
            x.cols(),
            model.shape.d
        )));
    }
    (0..x.rows())
        .into_par_iter()
        .map(|i| predict(model, x.row(i), nbar, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperparameter_rules() {
        let c = default_hyperparameters(4880);
        assert_eq!((c.clusters, c.r, c.num_learners, c.rcg.max_iters), (1, 100, 5, 30));
        let c = default_hyperparameters(15539);
        assert_eq!((c.clusters, c.r, c.num_learners), (2, 100, 5));
        let c = default_hyperparameters(196606);
        assert_eq!((c.clusters, c.r, c.num_learners), (32, 50, 20));
        assert_eq!(default_hyperparameters(1).clusters, 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                r: 0,
                ..Default::default()
            },
            TrainConfig {
                clusters: 0,
                ..Default::default()
            },
            TrainConfig {
                num_learners: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 0));
    }

    #[test]
    fn nearest_members_breaks_ties_by_index() {
        let z = DenseMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, 3.0]);
        let labels = SparseRowMatrix::zeros(4, 2);
        let c = ClusterModel::new(vec![0.0], DenseMatrix::zeros(1, 1), z, labels).unwrap();
        let q = nalgebra::DVector::from_element(1, 0.0);
        assert_eq!(c.nearest_members(&q, 3), vec![0, 1, 2]);
        let q = nalgebra::DVector::from_element(1, 2.0);
        assert_eq!(c.nearest_members(&q, 2), vec![0, 2]);
        assert_eq!(c.nearest_members(&q, 10).len(), 4);
    }
}
