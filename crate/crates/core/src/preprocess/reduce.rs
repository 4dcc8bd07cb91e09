use nalgebra::DMatrix;

use super::cov_eigen;
use crate::error::{Error, Result};

/// Data reduced to `L` dimensions: `y(v) = H ydot(v)`, noise covariance
/// `nu0_sq * C`.
#[derive(Clone, Debug)]
pub struct ReducedData {
    /// `L x V`.
    pub y: DMatrix<f64>,
    /// `L x T`, `H = Delta U'`.
    pub h: DMatrix<f64>,
    /// `L x L`, `C = H H'`.
    pub c: DMatrix<f64>,
    pub nu0_sq: f64,
    /// Diagonal of `Delta`.
    pub delta: Vec<f64>,
    /// `T x L`, leading eigenvectors as columns.
    pub u: DMatrix<f64>,
}

impl ReducedData {
    #[inline]
    pub fn n_ics(&self) -> usize {
        self.y.nrows()
    }

    #[inline]
    pub fn n_locations(&self) -> usize {
        self.y.ncols()
    }
}

/// Reduces `T x V` data to `L` dimensions from the leading eigenvectors of
/// the `T x T` covariance; the noise variance is the mean of the remaining
/// `T - L` eigenvalues.
pub fn dimension_reduce(y: &DMatrix<f64>, l: usize) -> Result<ReducedData> {
    let (t, v) = y.shape();
    if l == 0 || t <= l || v < 2 {
        return Err(Error::InvalidDims { rows: t, cols: l });
    }
    let eig = cov_eigen(y, l);
    let head: f64 = eig.values[..l].iter().sum();
    let nu0_sq = (eig.trace - head) / (t - l) as f64;
    if !(nu0_sq > 0.0) {
        return Err(Error::DegenerateData("no residual variance beyond the leading components"));
    }
    let mut delta = Vec::with_capacity(l);
    for (i, &d2) in eig.values[..l].iter().enumerate() {
        if !(d2 > nu0_sq) {
            return Err(Error::EigGap {
                component: i,
                eigenvalue: d2,
                noise: nu0_sq,
            });
        }
        delta.push(1.0 / (d2 - nu0_sq).sqrt());
    }
    let mut h = eig.vectors.transpose();
    for (i, d) in delta.iter().enumerate() {
        h.row_mut(i).scale_mut(*d);
    }
    let yr = &h * y;
    let c = &h * h.transpose();
    Ok(ReducedData {
        y: yr,
        h,
        c,
        nu0_sq,
        delta,
        u: eig.vectors,
    })
}
