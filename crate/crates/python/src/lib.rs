//! Python bindings: `import rxml`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rxml_core::data_io::{load_xmc_file_with, LoadOptions, SparseDataset};
use rxml_core::linalg::SparseRow;
use rxml_core::pipeline::{default_hyperparameters, EmbeddingSolver};
use rxml_core::selftest::{run_selftest, SelftestOptions};
use rxml_core::{EnsembleModel, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn load(path: PathBuf, one_based: bool, normalize: bool) -> PyResult<SparseDataset> {
    let opts = LoadOptions {
        one_based,
        l2_normalize: normalize,
    };
    load_xmc_file_with(&path, opts).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))
}

/// A trained ensemble of local embedding learners.
#[pyclass(module = "rxml", frozen)]
pub struct Model {
    inner: EnsembleModel,
}

#[pymethods]
impl Model {
    /// Trains on an XMC-format file. Unset hyperparameters follow the
    /// defaults for the training set size.
    #[staticmethod]
    #[pyo3(signature = (
        path, *, r=None, clusters=None, learners=None, nbar=None, predict_nbar=None,
        max_iters=None, solver="rcg", seed=0, one_based=false, normalize=false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        path: PathBuf,
        r: Option<usize>,
        clusters: Option<usize>,
        learners: Option<usize>,
        nbar: Option<usize>,
        predict_nbar: Option<usize>,
        max_iters: Option<usize>,
        solver: &str,
        seed: u64,
        one_based: bool,
        normalize: bool,
    ) -> PyResult<Self> {
        let ds = load(path, one_based, normalize)?;
        let mut cfg = default_hyperparameters(ds.n());
        cfg.seed = seed;
        cfg.r = r.unwrap_or(cfg.r);
        cfg.clusters = clusters.unwrap_or(cfg.clusters);
        cfg.num_learners = learners.unwrap_or(cfg.num_learners);
        cfg.nbar = nbar.unwrap_or(cfg.nbar);
        cfg.predict_nbar = predict_nbar.unwrap_or(cfg.predict_nbar);
        if let Some(m) = max_iters {
            cfg.rcg.max_iters = m;
            cfg.svp_max_iters = m;
        }
        cfg.embedding_solver = match solver {
            "rcg" => EmbeddingSolver::Rcg,
            "svp" => EmbeddingSolver::Svp,
            other => return Err(PyValueError::new_err(format!("unknown solver {other:?}"))),
        };
        let inner = py.detach(|| rxml_core::train(&ds, &cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        rxml_core::load_model(&dir).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Writes the model directory and returns the bytes written.
    fn save(&self, dir: PathBuf) -> PyResult<u64> {
        rxml_core::save_model(&self.inner, &dir).map_err(to_py)
    }

    /// `(n, d, l)` of the training set.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.inner.shape;
        (s.n, s.d, s.l)
    }

    /// Top `top` `(label, score)` pairs for one sparse feature row.
    #[pyo3(signature = (indices, values, top=5, nbar=None))]
    fn predict(
        &self,
        indices: Vec<usize>,
        values: Vec<f64>,
        top: usize,
        nbar: Option<usize>,
    ) -> PyResult<Vec<(usize, f64)>> {
        if indices.len() != values.len() {
            return Err(PyValueError::new_err("indices and values differ in length"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PyValueError::new_err("indices must be strictly increasing"));
        }
        if indices.last().is_some_and(|&j| j >= self.inner.shape.d) {
            return Err(PyValueError::new_err("feature index out of range"));
        }
        let row = SparseRow {
            indices: &indices,
            values: &values,
        };
        let nbar = nbar.unwrap_or(self.inner.config.predict_nbar);
        rxml_core::predict(&self.inner, row, nbar, top).map_err(to_py)
    }

    /// P@k and nDCG@k on a labelled XMC-format file, as
    /// `{"P@1": ..., "nDCG@1": ..., ...}` fractions.
    #[pyo3(signature = (path, ks=vec![1, 3, 5], nbar=None, one_based=false, normalize=false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        path: PathBuf,
        ks: Vec<usize>,
        nbar: Option<usize>,
        one_based: bool,
        normalize: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let ds = load(path, one_based, normalize)?;
        let nbar = nbar.unwrap_or(self.inner.config.predict_nbar);
        let report = py
            .detach(|| rxml_core::evaluate(&self.inner, &ds, &ks, nbar))
            .map_err(to_py)?;
        let out = PyDict::new(py);
        for (i, k) in report.ks.iter().enumerate() {
            out.set_item(format!("P@{k}"), report.precision[i])?;
            out.set_item(format!("nDCG@{k}"), report.ndcg[i])?;
        }
        Ok(out)
    }
}

#[pyfunction]
fn precision_at_k(predicted: Vec<usize>, truth: Vec<usize>, k: usize) -> PyResult<f64> {
    rxml_core::metrics::precision_at_k(&predicted, &truth, k).map_err(to_py)
}

#[pyfunction]
fn ndcg_at_k(predicted: Vec<usize>, truth: Vec<usize>, k: usize) -> PyResult<f64> {
    rxml_core::metrics::ndcg_at_k(&predicted, &truth, k).map_err(to_py)
}

/// Runs the built-in checks. Returns `(passed, table)`.
#[pyfunction]
#[pyo3(signature = (filter=None, seed=0))]
fn selftest(py: Python<'_>, filter: Option<String>, seed: u64) -> (bool, String) {
    let opts = SelftestOptions {
        filter,
        seed,
        ..Default::default()
    };
    let report = py.detach(|| run_selftest(&opts));
    (report.passed(), report.to_table())
}

#[pymodule]
pub fn rxml(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
