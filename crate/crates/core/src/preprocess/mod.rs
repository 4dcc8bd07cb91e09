//! Data preparation: centring and scaling, dual regression, nuisance
//! removal and dimension reduction.
//!
//! Data matrices are `T x V` (time by location).

mod center;
mod dual;
mod infomax;
mod nuisance;
mod reduce;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use center::{center_scale, CenterStats};
pub use dual::{dual_regression, pinv, DualRegression};
pub use infomax::{infomax_ica, InfomaxOptions, InfomaxResult};
pub use nuisance::{estimate_nuisance_count, remove_nuisance, NuisanceOptions, NuisanceRemoval, PPCA_PENALTY_WEIGHT};
pub use reduce::{dimension_reduce, ReducedData};

/// Eigen-decomposition of `Cov(Y) = Y Y' / (V - 1)` (`T x T`) through
/// whichever of `Y Y'` and `Y' Y` is smaller.
///
/// Returns all `min(T, V)` eigenvalues in decreasing order, the total
/// variance `trace(Cov(Y))`, and the leading `k` eigenvectors in time space
/// as columns of a `T x k` matrix. Each eigenvector's sign is fixed so that
/// its largest-magnitude entry is positive.
pub(crate) struct CovEigen {
    pub values: Vec<f64>,
    pub trace: f64,
    pub vectors: DMatrix<f64>,
}

pub(crate) fn cov_eigen(y: &DMatrix<f64>, k: usize) -> CovEigen {
    let (t, v) = y.shape();
    let denom = (v.max(2) - 1) as f64;
    let trace = y.norm_squared() / denom;
    let small_time = t <= v;
    let gram = if small_time {
        y * y.transpose() / denom
    } else {
        y.transpose() * y / denom
    };
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let k = k.min(order.len());
    let mut vectors = DMatrix::zeros(t, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut u: DVector<f64> = if small_time {
            eig.eigenvectors.column(i).into_owned()
        } else {
            let w = eig.eigenvectors.column(i);
            let u = y * w;
            let n = u.norm();
            if n > 0.0 {
                u / n
            } else {
                u
            }
        };
        let big = u.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            u.neg_mut();
        }
        vectors.set_column(c, &u);
    }
    CovEigen {
        values,
        trace,
        vectors,
    }
}
