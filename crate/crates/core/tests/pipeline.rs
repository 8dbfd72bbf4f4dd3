//! End-to-end training, prediction and persistence.

mod common;

use std::fs;

use common::*;
use rxml_core::data_io::SparseDataset;
use rxml_core::metrics::evaluate;
use rxml_core::model_io::{load_model, model_size_bytes, save_model, MANIFEST_FILE};
use rxml_core::pipeline::{
    kmeans_partition, predict, predict_scores, train, train_with_report, EmbeddingSolver, EnsembleModel, TrainConfig,
};
use rxml_core::Error;

fn toy_config() -> TrainConfig {
    TrainConfig {
        r: 2,
        nbar: 4,
        predict_nbar: 3,
        clusters: 1,
        num_learners: 1,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        r: 6,
        nbar: 8,
        predict_nbar: 8,
        clusters: 3,
        num_learners: 3,
        seed,
        ..TrainConfig::default()
    }
}

fn small_dataset() -> SparseDataset {
    clustered_dataset(&mut rng(40), 240, 60, 25, 6)
}

#[test]
fn realizable_toy_is_solved_exactly() {
    let ds = realizable_dataset(8);
    let model = train(&ds, &toy_config()).unwrap();
    let report = evaluate(&model, &ds, &[1, 2], 3).unwrap();
    assert_eq!(report.precision_at(1), Some(1.0));
    assert_eq!(report.ndcg_at(1), Some(1.0));
    assert_eq!(report.ndcg_at(2), Some(1.0));
    for i in 0..ds.n() {
        let truth = ds.labels(i);
        let mut top: Vec<usize> = predict(&model, ds.x.row(i), 3, truth.len())
            .unwrap()
            .into_iter()
            .map(|(label, _)| label)
            .collect();
        top.sort_unstable();
        assert_eq!(top, truth, "point {i}");
    }
}

/// With n̄ = 12 every group's neighbor rows reach into another group. SVP
/// starts from zero and keeps a disconnected pattern block diagonal, which a
/// rank-2 truncation cannot fit.
#[test]
fn both_embedding_solvers_fit_the_toy_targets() {
    let ds = realizable_dataset(8);
    for solver in [EmbeddingSolver::Rcg, EmbeddingSolver::Svp] {
        let cfg = TrainConfig {
            embedding_solver: solver,
            nbar: 12,
            svp_max_iters: 500,
            rcg: rxml_core::rcg::RcgConfig {
                max_iters: 200,
                ..Default::default()
            },
            ..toy_config()
        };
        let (_, report) = train_with_report(&ds, &cfg).unwrap();
        for c in &report.clusters {
            assert!(
                c.embedding_objective <= 1e-5 * c.target_norm_sq,
                "{solver:?}: {} vs target {}",
                c.embedding_objective,
                c.target_norm_sq
            );
        }
    }
}

#[test]
fn training_is_deterministic() {
    let ds = small_dataset();
    let (a, ra) = train_with_report(&ds, &small_config(3)).unwrap();
    let (b, rb) = train_with_report(&ds, &small_config(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    let (c, _) = train_with_report(&ds, &small_config(4)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn serial_and_parallel_training_agree() {
    let ds = small_dataset();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&ds, &small_config(11)).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn single_neighbor_prediction_returns_nearest_member_labels() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        num_learners: 1,
        ..small_config(5)
    };
    let model = train(&ds, &cfg).unwrap();
    for i in (0..ds.n()).step_by(17) {
        let x = ds.x.row(i);
        // Nearest centroid and nearest embedded member, by exhaustive search.
        let cluster = model.learners[0]
            .iter()
            .min_by(|a, b| {
                let da = sq_dist(a.centroid(), x);
                let db = sq_dist(b.centroid(), x);
                da.total_cmp(&db)
            })
            .unwrap();
        let z = cluster.embed(x);
        let nearest = (0..cluster.size())
            .min_by(|&a, &b| {
                let da = (cluster.z().row(a).transpose() - &z).norm_squared();
                let db = (cluster.z().row(b).transpose() - &z).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap();
        let expected = cluster.member_labels().row(nearest).indices.to_vec();
        let mut got: Vec<usize> = predict(&model, x, 1, ds.l())
            .unwrap()
            .into_iter()
            .map(|p| p.0)
            .collect();
        got.sort_unstable();
        assert_eq!(got, expected, "point {i}");
    }
}

fn sq_dist(centroid: &[f64], x: rxml_core::linalg::SparseRow<'_>) -> f64 {
    let mut total: f64 = centroid.iter().map(|c| c * c).sum();
    for (j, v) in x.iter() {
        total += (v - centroid[j]).powi(2) - centroid[j].powi(2);
    }
    total
}

#[test]
fn duplicated_learner_leaves_scores_unchanged() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        num_learners: 1,
        ..small_config(6)
    };
    let single = train(&ds, &cfg).unwrap();
    let doubled = EnsembleModel {
        learners: vec![single.learners[0].clone(), single.learners[0].clone()],
        ..single.clone()
    };
    for i in 0..20 {
        let a = predict_scores(&single, ds.x.row(i), 8).unwrap();
        let b = predict_scores(&doubled, ds.x.row(i), 8).unwrap();
        assert_eq!(a.len(), b.len());
        for ((la, sa), (lb, sb)) in a.iter().zip(&b) {
            assert_eq!(la, lb);
            assert!((sa - sb).abs() <= 1e-15 * sa.abs());
        }
    }
}

#[test]
fn saved_models_reload_bit_identically() {
    let ds = small_dataset();
    let model = train(&ds, &small_config(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let written = save_model(&model, &first).unwrap();
    assert_eq!(written, model_size_bytes(&first).unwrap());
    let loaded = load_model(&first).unwrap();
    assert_eq!(loaded, model);
    save_model(&loaded, &second).unwrap();
    let mut names: Vec<_> = fs::read_dir(&first).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        assert_eq!(
            fs::read(first.join(&name)).unwrap(),
            fs::read(second.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    for i in 0..ds.n() {
        assert_eq!(
            predict(&model, ds.x.row(i), 8, 5).unwrap(),
            predict(&loaded, ds.x.row(i), 8, 5).unwrap()
        );
    }
}

fn edit_manifest(dir: &std::path::Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join(MANIFEST_FILE);
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut manifest);
    fs::write(path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
}

#[test]
fn edited_manifests_are_rejected() {
    let ds = realizable_dataset(5);
    let model = train(&ds, &toy_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();

    save_model(&model, dir.path()).unwrap();
    edit_manifest(dir.path(), |m| m["dataset"]["d"] = serde_json::json!(4));
    assert!(matches!(load_model(dir.path()), Err(Error::CorruptModel(_))));

    save_model(&model, dir.path()).unwrap();
    edit_manifest(dir.path(), |m| m["format_version"] = serde_json::json!(99));
    assert!(matches!(load_model(dir.path()), Err(Error::Version { found: 99, .. })));

    save_model(&model, dir.path()).unwrap();
    edit_manifest(dir.path(), |m| m["learners"][0][0]["members"] = serde_json::json!(3));
    assert!(matches!(load_model(dir.path()), Err(Error::CorruptModel(_))));

    save_model(&model, dir.path()).unwrap();
    edit_manifest(dir.path(), |m| {
        m["learners"][0][0]["file"] = serde_json::json!("../escape.bin")
    });
    assert!(matches!(load_model(dir.path()), Err(Error::CorruptModel(_))));

    assert!(matches!(load_model(dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn model_size_tracks_payload() {
    let ds = small_dataset();
    let cfg = small_config(9);
    let model = train(&ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let payload: usize = model
        .learners
        .iter()
        .flatten()
        .map(|c| 8 * (c.size() * c.rank() + c.rank() * ds.d() + c.member_labels().nnz()))
        .sum();
    let size = model_size_bytes(dir.path()).unwrap() as f64;
    assert!(
        size >= payload as f64 && size <= 2.0 * payload as f64,
        "{size} vs {payload}"
    );
}

#[test]
fn kmeans_extremes() {
    let ds = small_dataset();
    let one = kmeans_partition(&ds.x, 1, 0).unwrap();
    assert!(one.assignment.iter().all(|&a| a == 0));
    let all = kmeans_partition(&ds.x.select_rows(&(0..12).collect::<Vec<_>>()), 12, 0).unwrap();
    let mut sorted = all.assignment.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 12);
}

#[test]
fn mismatched_feature_width_is_rejected() {
    let ds = realizable_dataset(4);
    let model = train(&ds, &toy_config()).unwrap();
    let other = small_dataset();
    assert!(evaluate(&model, &other, &[1], 3).is_err());
    assert!(rxml_core::pipeline::predict_batch(&model, &other.x, 3, 1).is_err());
}
