use nalgebra::DMatrix;

use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::preprocess::ReducedData;

/// Pearson correlations between the columns of a `T x L` mixing matrix.
pub fn fc_matrix(mixing: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, l) = mixing.shape();
    if t < 3 {
        return Err(Error::InvalidDims { rows: t, cols: l });
    }
    let mut centred = mixing.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ConstantColumn(j));
        }
        col /= norm;
    }
    let mut r = centred.transpose() * &centred;
    for i in 0..l {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let x = (0.5 * (r[(i, j)] + r[(j, i)])).clamp(-1.0, 1.0);
            r[(i, j)] = x;
            r[(j, i)] = x;
        }
    }
    Ok(r)
}

/// `T x L` timecourses of a fit: the minimum-norm solution `H' C^{-1} M` of
/// `H A = M`.
pub fn fit_timecourses(fit: &FitResult, reduced: &ReducedData) -> Result<DMatrix<f64>> {
    let chol = reduced
        .c
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("noise covariance is not positive definite".into()))?;
    Ok(reduced.h.transpose() * chol.solve(&fit.params.mixing))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn duplicated_column_has_unit_correlation() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 1.0, 0.5, 0.5, 3.0, 4.0, 4.0, 1.0]);
        let r = fc_matrix(&m).unwrap();
        assert!((r[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_centred_columns_are_uncorrelated() {
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        assert!(fc_matrix(&m).unwrap()[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn matches_direct_formula_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(50, 3, |_, _| rng.random::<f64>());
        let r = fc_matrix(&m).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let (x, y) = (m.column(a), m.column(b));
                let (mx, my) = (x.mean(), y.mean());
                let sxy: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p - mx) * (q - my)).sum();
                let sxx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
                let syy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
                assert!((r[(a, b)] - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
            }
        }
        assert!(r.symmetric_eigenvalues().min() > -1e-10);
    }

    #[test]
    fn constant_column_is_an_error() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 2.0, 3.0, 2.0]);
        assert!(matches!(fc_matrix(&m), Err(Error::ConstantColumn(1))));
    }
}
