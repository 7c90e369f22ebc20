//! Differentiable computation core and the classical algorithms the
//! pipeline relies on: symmetric eigendecomposition and k-means.

mod eigen;
mod gradcheck;
mod graph;
mod kmeans;
mod optim;
mod params;
mod tensor;

pub use eigen::{symmetric_eigen, top_k_eigenvectors, ClusterIndicator, SymmetricEigen};
pub use gradcheck::{grad_check, GradCheckError};
pub use graph::{sigmoid, Gradients, Graph, ParamId, Var, COSINE_NORM_FLOOR, PROB_FLOOR};
pub use kmeans::{kmeans, ClusterModel, KMeansFit, MAX_LLOYD_ITERATIONS};
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use tensor::{Matrix, Tensor};

pub(crate) use graph::{softmax_rows, unit_rows};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
