//! Sparse symmetric positive-definite linear algebra.
//!
//! Lower-triangle storage ([`SparseSym`]), minimum-degree ordered Cholesky
//! factorization with reusable symbolic analysis ([`Symbolic`],
//! [`CholFactor`]), and selected inversion on a prescribed pattern
//! ([`partial_inverse`], [`SelectedInverse`]).

mod chol;
mod matrix;
mod ordering;
mod takahashi;

pub use chol::{cholesky, CholFactor, Symbolic, PIVOT_REL_TOL};
pub use matrix::{Pattern, SparseSym};
pub use takahashi::{partial_inverse, SelectedInverse};

/// Convenience: `ln det(A)` from a factor.
pub fn logdet<T: crate::scalar::Real>(factor: &CholFactor<T>) -> T {
    factor.logdet()
}
