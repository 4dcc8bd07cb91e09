use nalgebra::DMatrix;

use super::{EmData, PosteriorMoments};
use crate::error::{Error, Result};

/// `M = (sum_v y(v) t(v)') (sum_v T(v, v))^{-1}` with
/// `T(v, v) = D(v) Omega^{-1}(v, v) D(v) + t(v) t(v)'`.
pub fn update_mixing(moments: &PosteriorMoments, data: &EmData) -> Result<DMatrix<f64>> {
    let (l, v) = moments.mu.shape();
    let q = data.y.nrows();
    if data.y.ncols() != v || moments.location_blocks.len() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            got: data.y.ncols(),
            context: "posterior and data location counts",
        });
    }
    let yt = &data.y * moments.mu.transpose();
    let mut tt = &moments.mu * moments.mu.transpose();
    for (loc, block) in moments.location_blocks.iter().enumerate() {
        for i in 0..l {
            let di = moments.d[(i, loc)];
            if di == 0.0 {
                continue;
            }
            for j in 0..l {
                tt[(i, j)] += di * block[(i, j)] * moments.d[(j, loc)];
            }
        }
    }
    let tt = (&tt + tt.transpose()) * 0.5;
    let chol = tt.cholesky().ok_or(Error::SingularSecondMoment)?;
    // M' = T^{-1} (sum y t')'
    let mt = chol.solve(&yt.transpose());
    debug_assert_eq!(mt.shape(), (l, q));
    Ok(mt.transpose())
}
