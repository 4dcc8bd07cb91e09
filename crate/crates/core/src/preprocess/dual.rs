use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular-value cutoff for rank decisions.
const RANK_TOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse; `None` if `a` is not of full rank.
pub fn pinv(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() <= RANK_TOL * smax {
        return None;
    }
    svd.pseudo_inverse(0.0).ok()
}

/// Output of [`dual_regression`].
#[derive(Clone, Debug)]
pub struct DualRegression {
    /// `T x L`.
    pub mixing: DMatrix<f64>,
    /// `L x V`.
    pub maps: DMatrix<f64>,
}

impl DualRegression {
    /// `mixing * maps`, the fitted template signal.
    pub fn fitted(&self) -> DMatrix<f64> {
        &self.mixing * &self.maps
    }
}

/// Stage 1 regresses each time point on the group maps; stage 2 regresses
/// each location on the resulting timecourses.
pub fn dual_regression(y: &DMatrix<f64>, group_maps: &DMatrix<f64>) -> Result<DualRegression> {
    if group_maps.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: y.ncols(),
            got: group_maps.ncols(),
            context: "group map length",
        });
    }
    let gp = pinv(group_maps).ok_or(Error::RankDeficientMaps)?;
    let mixing = y * gp;
    let mp = pinv(&mixing).ok_or(Error::RankDeficientMaps)?;
    let maps = mp * y;
    Ok(DualRegression { mixing, maps })
}
