//! Post-fit inference: marginal SDs, excursion sets, per-location tests and
//! functional connectivity.

mod excursion;
mod fc;
mod ttest;

pub use excursion::{
    deviation_set, excursion_set, CovarianceField, Direction, ExcursionResult, FieldSampler, PosteriorField,
    DEFAULT_EXCURSION_SAMPLES, MIN_EXCURSION_SAMPLES,
};
pub use fc::{fc_matrix, fit_timecourses};
pub use ttest::{bonferroni_mask, ttest_engagement};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `sqrt(D^2 diag(Omega^{-1}))`, elementwise on `L x V` maps.
pub fn marginal_sd(d: &DMatrix<f64>, omega_inv_diag: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if d.shape() != omega_inv_diag.shape() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            got: omega_inv_diag.len(),
            context: "prior SD and posterior variance maps",
        });
    }
    Ok(d.zip_map(omega_inv_diag, |d, w| d.abs() * w.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::em::estep::tests::{dense_reference, random_problem, tiny_prior};
    use crate::em::{e_step, OmegaLayout};

    #[test]
    fn unit_prior_and_doubled_precision() {
        let d = DMatrix::from_element(2, 3, 1.0);
        let w = DMatrix::from_element(2, 3, 0.5);
        let sd = marginal_sd(&d, &w).unwrap();
        assert!(sd.iter().all(|x| (x - 0.5f64.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn matches_dense_posterior_covariance() {
        let prior = tiny_prior(2, 3);
        let (params, data) = random_problem(2, 6, 4);
        let layout = OmegaLayout::new(Arc::clone(prior.r_pattern()), 2).unwrap();
        let mom = e_step(&params, &data, &prior, &layout).unwrap();
        let inv_diag = DMatrix::from_fn(2, 6, |i, j| mom.location_blocks[j][(i, i)]);
        let sd = marginal_sd(&data.d, &inv_diag).unwrap();
        let dense = dense_reference(&params, &data, &prior);
        for i in 0..2 {
            for j in 0..6 {
                let k = i * 6 + j;
                let want = data.d[(i, j)] * dense.omega_inv[(k, k)].sqrt();
                assert!((sd[(i, j)] - want).abs() < 1e-9 * want);
            }
        }
    }
}
