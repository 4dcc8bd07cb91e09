use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// What [`center_scale`] removed.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterStats {
    pub grand_mean: f64,
    /// Per time point, over locations.
    pub row_means: Vec<f64>,
    /// Per location, over time.
    pub col_means: Vec<f64>,
    /// Global image SD before scaling.
    pub global_sd: f64,
    /// False when the centred data were identically zero.
    pub scaled: bool,
}

/// Two-way centring followed by division by the global image SD (square
/// root of the variance across locations, averaged over time).
pub fn center_scale(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, CenterStats)> {
    let (t, v) = y.shape();
    if t < 2 || v < 2 {
        return Err(Error::InvalidDims { rows: t, cols: v });
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateData("non-finite values in data"));
    }
    let row_means: Vec<f64> = y.row_iter().map(|r| r.mean()).collect();
    let col_means: Vec<f64> = y.column_iter().map(|c| c.mean()).collect();
    let grand_mean = row_means.iter().sum::<f64>() / t as f64;
    let mut out = DMatrix::from_fn(t, v, |i, j| y[(i, j)] - row_means[i] - col_means[j] + grand_mean);
    // One clean-up sweep removes rounding left by the closed form.
    for i in 0..t {
        let m = out.row(i).mean();
        out.row_mut(i).add_scalar_mut(-m);
    }
    for j in 0..v {
        let m = out.column(j).mean();
        out.column_mut(j).add_scalar_mut(-m);
    }
    let global_sd = global_image_sd(&out);
    let scaled = global_sd > f64::EPSILON * y.amax().max(1.0) * 1e3;
    if scaled {
        out /= global_sd;
    } else {
        out.fill(0.0);
    }
    Ok((
        out,
        CenterStats {
            grand_mean,
            row_means,
            col_means,
            global_sd,
            scaled,
        },
    ))
}

pub(crate) fn global_image_sd(y: &DMatrix<f64>) -> f64 {
    let v = y.ncols();
    let mean_var = y
        .row_iter()
        .map(|r| {
            let m = r.mean();
            r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v - 1) as f64
        })
        .sum::<f64>()
        / y.nrows() as f64;
    mean_var.sqrt()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    #[test]
    fn constant_matrix_becomes_zero_without_scaling() {
        let (c, s) = center_scale(&DMatrix::from_element(4, 5, 3.5)).unwrap();
        assert!(c.iter().all(|&x| x == 0.0));
        assert!(!s.scaled);
    }

    #[test]
    fn additive_structure_is_annihilated() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 4.0, -1.0, 0.25];
        let y = DMatrix::from_fn(3, 4, |i, j| a[i] + b[j]);
        let (c, s) = center_scale(&y).unwrap();
        assert!(c.iter().all(|&x| x == 0.0));
        assert!(!s.scaled);
    }

    #[test]
    fn random_data_is_centred_and_unit_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = Normal::new(3.0, 2.0).unwrap();
        let y = DMatrix::from_fn(40, 70, |_, _| n.sample(&mut rng));
        let (c, s) = center_scale(&y).unwrap();
        assert!(s.scaled);
        for r in c.row_iter() {
            assert!(r.mean().abs() <= 1e-12);
        }
        for col in c.column_iter() {
            assert!(col.mean().abs() <= 1e-12);
        }
        assert!((global_image_sd(&c) - 1.0).abs() <= 1e-12);
        // Idempotent.
        let (c2, _) = center_scale(&c).unwrap();
        assert!((c2 - &c).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(matches!(
            center_scale(&DMatrix::zeros(1, 5)),
            Err(Error::InvalidDims { .. })
        ));
    }
}
