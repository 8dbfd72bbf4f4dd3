//! Precision and nDCG over top-k label rankings.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::SparseDataset;
use crate::error::{Error, Result};
use crate::pipeline::{predict_batch, EnsembleModel};

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

/// `truth` must be sorted ascending.
fn hits<'a>(predicted: &'a [usize], truth: &'a [usize], k: usize) -> impl Iterator<Item = (usize, bool)> + 'a {
    predicted
        .iter()
        .take(k)
        .enumerate()
        .map(move |(rank, label)| (rank, truth.binary_search(label).is_ok()))
}

/// Fraction of the first `k` predictions found in `truth` (sorted ascending).
pub fn precision_at_k(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    let count = hits(predicted, truth, k).filter(|h| h.1).count();
    Ok(count as f64 / k as f64)
}

pub fn ndcg_at_k(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = hits(predicted, truth, k).filter(|h| h.1).map(|h| gain(h.0)).sum();
    let idcg: f64 = (0..k.min(truth.len())).map(gain).sum();
    Ok(dcg / idcg)
}

/// Extends `ranking` to `k` entries with the lowest label indices not already
/// present.
pub fn pad_ranking(ranking: &mut Vec<usize>, k: usize, num_labels: usize) {
    let mut candidate = 0;
    while ranking.len() < k.min(num_labels) {
        if !ranking.contains(&candidate) {
            ranking.push(candidate);
        }
        candidate += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    /// Mean P@k for each entry of `ks`.
    pub precision: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub samples: usize,
    /// Test points without any true label; they score 0 on every metric.
    pub empty_truth: usize,
    pub train_secs: Option<f64>,
    pub test_secs: f64,
}

impl EvalReport {
    /// Aligned text table with metrics in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "metric");
        for k in &self.ks {
            let _ = write!(out, "{:>9}", format!("@{k}"));
        }
        out.push('\n');
        for (name, values) in [("P", &self.precision), ("nDCG", &self.ndcg)] {
            let _ = write!(out, "{name:<8}");
            for v in values {
                let _ = write!(out, "{:>9.2}", 100.0 * v);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "samples {} (without labels: {})", self.samples, self.empty_truth);
        out
    }

    /// `metric,k,value` rows with values as fractions.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value\n");
        for (name, values) in [("P", &self.precision), ("nDCG", &self.ndcg)] {
            for (k, v) in self.ks.iter().zip(values.iter()) {
                let _ = writeln!(out, "{name},{k},{v}");
            }
        }
        out
    }

    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.precision[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }
}

/// Metrics of `rankings` against the label rows of `test`.
pub fn score_rankings(rankings: &[Vec<usize>], test: &SparseDataset, ks: &[usize]) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::invalid("no cutoffs given"));
    }
    for &k in ks {
        check_k(k)?;
    }
    if rankings.len() != test.n() {
        return Err(Error::invalid(format!(
            "{} rankings for {} test points",
            rankings.len(),
            test.n()
        )));
    }
    let k_max = *ks.iter().max().unwrap();
    let per_point: Vec<Vec<(f64, f64)>> = rankings
        .par_iter()
        .enumerate()
        .map(|(i, ranking)| {
            let mut ranking = ranking.clone();
            pad_ranking(&mut ranking, k_max, test.l());
            let truth = test.labels(i);
            ks.iter()
                .map(|&k| Ok((precision_at_k(&ranking, truth, k)?, ndcg_at_k(&ranking, truth, k)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n = test.n().max(1) as f64;
    let mean = |pick: fn(&(f64, f64)) -> f64, c: usize| per_point.iter().map(|p| pick(&p[c])).sum::<f64>() / n;
    Ok(EvalReport {
        ks: ks.to_vec(),
        precision: (0..ks.len()).map(|c| mean(|p| p.0, c)).collect(),
        ndcg: (0..ks.len()).map(|c| mean(|p| p.1, c)).collect(),
        samples: test.n(),
        empty_truth: (0..test.n()).filter(|&i| test.labels(i).is_empty()).count(),
        train_secs: None,
        test_secs: 0.0,
    })
}

/// Predicts every test point with `nbar` neighbors and averages the metrics.
pub fn evaluate(model: &EnsembleModel, test: &SparseDataset, ks: &[usize], nbar: usize) -> Result<EvalReport> {
    if test.d() != model.shape.d || test.l() != model.shape.l {
        return Err(Error::invalid(format!(
            "test set is {}×{} (features×labels), model expects {}×{}",
            test.d(),
            test.l(),
            model.shape.d,
            model.shape.l
        )));
    }
    let start = Instant::now();
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let predictions = predict_batch(model, &test.x, nbar, k_max)?;
    let rankings: Vec<Vec<usize>> = predictions
        .into_iter()
        .map(|p| p.into_iter().map(|(label, _)| label).collect())
        .collect();
    let mut report = score_rankings(&rankings, test, ks)?;
    report.test_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
