//! Riemannian optimization on fixed-rank and PSD fixed-rank matrix manifolds,
//! and an extreme multi-label classifier built on per-cluster local
//! embeddings learned with Riemannian conjugate gradient.

// `!(x > t)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod error;
pub mod global;
pub mod linalg;
pub mod local;
pub mod manifold;
pub mod metrics;
pub mod model_io;
pub mod pipeline;
pub mod rcg;
pub mod selftest;

pub use data_io::{load_xmc_file, SparseDataset};
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SparseRowMatrix};
pub use metrics::{evaluate, EvalReport};
pub use model_io::{load_model, save_model};
pub use pipeline::{default_hyperparameters, predict, train, EnsembleModel, TrainConfig};
