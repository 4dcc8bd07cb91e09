//! Template ICA with spatial priors for single-subject brain networks.
//!
//! Sparse linear algebra and the SPDE prior are generic over the scalar
//! type; the aliases below name the `f64` instances used by the rest of the
//! crate.

pub mod em;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod mesh;
pub mod preprocess;
pub mod scalar;
pub mod sparsela;
pub mod template;

pub use error::{Error, Result};

pub type SparseMatrix = sparsela::SparseSym<f64>;
pub type Factor = sparsela::CholFactor<f64>;
pub type SelectedInverse = sparsela::SelectedInverse<f64>;
pub type Fem = mesh::FemMatrices<f64>;
pub type Spde = mesh::SpdeOperator<f64>;
pub type DataPrecision = mesh::DataPrecisionBuilder<f64>;
