//! EM estimation of the template ICA model with and without spatial priors.
//!
//! Latent vectors are ordered IC-major: entry `l * V + v` is IC `l` at
//! location `v`. Per-location quantities are stored as `L x V` matrices
//! whose row `l` is IC `l`.

pub(crate) mod estep;
mod fit;
mod kappa;
mod mstep;
mod omega;
mod prior;
mod squarem;
mod tica;

use nalgebra::DMatrix;

pub use estep::{e_step, PosteriorMoments};
pub use fit::{
    fit_stica, fit_stica_data, initial_mixing, FitOptions, FitResult, Method, Posterior, PosteriorPrecision,
};
pub use kappa::{
    init_kappa, init_kappa_objective, kappa_objective, sym_trace_product, update_kappa, KappaUpdate,
    KAPPA_SEARCH_HALF_WIDTH, KAPPA_SEARCH_TOL,
};
pub use mstep::update_mixing;
pub use omega::{build_omega, OmegaLayout};
pub use prior::SpatialPrior;
pub use squarem::{squarem, IterationRecord, SquaremOptions, SquaremOutcome};
pub use tica::{fit_tica, fit_tica_data, tica_e_step};

use crate::error::{Error, Result};
use crate::preprocess::ReducedData;
use crate::template::Template;

/// Prior SDs are floored at this fraction of the median positive SD of
/// each IC.
pub const SD_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SmoothnessMode {
    /// One `kappa` shared by all ICs.
    #[default]
    Common,
    PerIc,
}

/// Parameters of the reduced model `y(v) = M s(v) + e(v)`,
/// `e(v) ~ N(0, nu0_sq C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `q x L` mixing matrix.
    pub mixing: DMatrix<f64>,
    /// One shared value or one per IC.
    pub kappas: Vec<f64>,
    pub nu0_sq: f64,
    /// `q x q` noise covariance shape.
    pub c: DMatrix<f64>,
}

impl ModelParams {
    pub fn new(mixing: DMatrix<f64>, kappas: Vec<f64>, nu0_sq: f64, c: DMatrix<f64>) -> Result<Self> {
        let (q, l) = mixing.shape();
        if c.shape() != (q, q) {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: c.nrows(),
                context: "noise covariance order",
            });
        }
        if !(kappas.len() == 1 || kappas.len() == l) && !kappas.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: l,
                got: kappas.len(),
                context: "kappa count",
            });
        }
        if let Some(&k) = kappas.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::NonPositiveKappa(k));
        }
        if !(nu0_sq > 0.0 && nu0_sq.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {nu0_sq}")));
        }
        if c.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument("noise covariance is not positive definite".into()));
        }
        Ok(ModelParams {
            mixing,
            kappas,
            nu0_sq,
            c,
        })
    }

    #[inline]
    pub fn n_ics(&self) -> usize {
        self.mixing.ncols()
    }

    /// `kappa` for IC `l`.
    ///
    /// # Panics
    /// If there are no kappas (non-spatial model).
    #[inline]
    pub fn kappa(&self, l: usize) -> f64 {
        if self.kappas.len() == 1 {
            self.kappas[0]
        } else {
            self.kappas[l]
        }
    }
}

/// Fixed inputs to EM.
#[derive(Clone, Debug)]
pub struct EmData {
    /// `q x V` reduced data.
    pub y: DMatrix<f64>,
    /// `L x V` template mean.
    pub s0: DMatrix<f64>,
    /// `L x V` prior SDs.
    pub d: DMatrix<f64>,
}

impl EmData {
    /// Uses the template SDs floored by [`floored_sd`].
    pub fn new(reduced: &ReducedData, template: &Template) -> Result<Self> {
        Self::with_prior_sd(reduced.y.clone(), template.mean().clone(), floored_sd(template.variance()))
    }

    pub fn with_prior_sd(y: DMatrix<f64>, s0: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        if s0.ncols() != y.ncols() || d.shape() != s0.shape() {
            return Err(Error::DimensionMismatch {
                expected: y.ncols(),
                got: s0.ncols(),
                context: "template and data location counts",
            });
        }
        if d.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument("prior SDs must be finite and non-negative".into()));
        }
        Ok(EmData { y, s0, d })
    }

    #[inline]
    pub fn n_ics(&self) -> usize {
        self.s0.nrows()
    }

    #[inline]
    pub fn n_locations(&self) -> usize {
        self.s0.ncols()
    }
}

/// Square root of `variance`, each row floored at [`SD_FLOOR_FRACTION`]
/// times its median positive SD.
pub fn floored_sd(variance: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = variance.map(|x| x.max(0.0).sqrt());
    for mut row in d.row_iter_mut() {
        let mut pos: Vec<f64> = row.iter().copied().filter(|&x| x > 0.0).collect();
        if pos.is_empty() {
            continue;
        }
        pos.sort_by(f64::total_cmp);
        let n = pos.len();
        let median = if n % 2 == 1 {
            pos[n / 2]
        } else {
            0.5 * (pos[n / 2 - 1] + pos[n / 2])
        };
        let floor = SD_FLOOR_FRACTION * median;
        row.apply(|x| *x = x.max(floor));
    }
    d
}

/// Location-wise pieces of the likelihood shared by both E-steps.
#[derive(Clone, Debug)]
pub(crate) struct DataTerm {
    /// `M' C^{-1} M / nu0_sq`.
    pub a: DMatrix<f64>,
    /// `M' C^{-1} (y(v) - M s0(v)) / nu0_sq`, `L x V`.
    pub r: DMatrix<f64>,
    /// `M' C^{-1} y(v) / nu0_sq`, `L x V`.
    pub b: DMatrix<f64>,
    /// `sum_v e(v)' C^{-1} e(v) / nu0_sq` with `e(v) = y(v) - M s0(v)`.
    pub resid_quad: f64,
    /// `ln det(nu0_sq C)`.
    pub logdet_noise: f64,
}

impl DataTerm {
    pub fn new(params: &ModelParams, data: &EmData) -> Result<Self> {
        let m = &params.mixing;
        let (q, l) = m.shape();
        if data.y.nrows() != q || data.n_ics() != l {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: data.y.nrows(),
                context: "mixing matrix and data dimensions",
            });
        }
        let chol = params
            .c
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("noise covariance is not positive definite".into()))?;
        let cinv_m = chol.solve(m);
        let mt_cinv = cinv_m.transpose() / params.nu0_sq;
        let a = &mt_cinv * m;
        let a = (&a + a.transpose()) * 0.5;
        let e = &data.y - m * &data.s0;
        let r = &mt_cinv * &e;
        let b = &mt_cinv * &data.y;
        let cinv_e = chol.solve(&e);
        let resid_quad = e.dot(&cinv_e) / params.nu0_sq;
        let logdet_noise = q as f64 * params.nu0_sq.ln() + 2.0 * chol.l().diagonal().map(f64::ln).sum();
        Ok(DataTerm {
            a,
            r,
            b,
            resid_quad,
            logdet_noise,
        })
    }
}
