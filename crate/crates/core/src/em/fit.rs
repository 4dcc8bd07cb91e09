use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use super::estep::e_step_full;
use super::squarem::{squarem, IterationRecord, SquaremOptions};
use super::{init_kappa, update_kappa, update_mixing, EmData, ModelParams, OmegaLayout, SmoothnessMode, SpatialPrior};
use crate::error::{Error, Result};
use crate::preprocess::{pinv, ReducedData};
use crate::sparsela::{CholFactor, SparseSym};
use crate::template::Template;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Spatial priors on the deviations.
    Stica,
    /// Spatially independent deviations.
    Tica,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub mode: SmoothnessMode,
    /// Stop when the norm of the change in `(vec M, ln kappa)` falls below
    /// this.
    pub tol: f64,
    pub max_iter: usize,
    pub squarem: bool,
    /// Skips the marginal-likelihood initialization of `kappa`.
    pub initial_kappa: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: SmoothnessMode::Common,
            tol: 1e-3,
            max_iter: 100,
            squarem: true,
            initial_kappa: None,
        }
    }
}

impl FitOptions {
    pub(crate) fn squarem_options(&self) -> SquaremOptions {
        SquaremOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            accelerate: self.squarem,
            ..Default::default()
        }
    }
}

/// Posterior precision of the scaled deviations `D^{-1} (s - s0)`.
#[derive(Clone, Debug)]
pub enum PosteriorPrecision {
    /// `Omega` over all ICs and locations (IC-major) with its factor.
    Joint {
        omega: SparseSym<f64>,
        factor: CholFactor<f64>,
    },
    /// `Omega(v)^{-1}` at each location; the locations are independent.
    Local(Vec<DMatrix<f64>>),
}

/// `s = mean + D x`, `x ~ N(0, Omega^{-1})`.
#[derive(Clone, Debug)]
pub struct Posterior {
    /// `L x V`.
    pub mean: DMatrix<f64>,
    /// `L x V`.
    pub d: DMatrix<f64>,
    pub precision: PosteriorPrecision,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub method: Method,
    pub params: ModelParams,
    /// `L x V` posterior means.
    pub subject_ics: DMatrix<f64>,
    /// `L x V`, `subject_ics - template mean`.
    pub subject_effects: DMatrix<f64>,
    /// `L x V` posterior SDs.
    pub marginal_sd: DMatrix<f64>,
    pub trace: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
    /// Log-likelihood at the returned parameters.
    pub log_likelihood: f64,
    /// Some `kappa` update stopped at the edge of its bracket.
    pub kappa_at_boundary: bool,
    pub posterior: Posterior,
}

/// Dual-regression stage 1 on the reduced data: `M0 = y pinv(s0)`.
pub fn initial_mixing(data: &EmData) -> Result<DMatrix<f64>> {
    let gp = pinv(&data.s0).ok_or(Error::RankDeficientMaps)?;
    Ok(&data.y * gp)
}

pub(crate) fn check_inputs(reduced: &ReducedData, template: &Template) -> Result<()> {
    if template.n_ics() != reduced.n_ics() || template.n_locations() != reduced.n_locations() {
        return Err(Error::DimensionMismatch {
            expected: reduced.n_ics(),
            got: template.n_ics(),
            context: "template and reduced data ICs",
        });
    }
    Ok(())
}

/// Initial `kappa` from dual-regression deviations. The noise variance of
/// each dual-regression map is `nu0^2 [M0^+ C M0^+']_ll`.
fn initial_kappas(
    prior: &SpatialPrior,
    data: &EmData,
    m0: &DMatrix<f64>,
    reduced: &ReducedData,
    mode: SmoothnessMode,
) -> Result<Vec<f64>> {
    let mp = pinv(m0).ok_or(Error::RankDeficientMaps)?;
    let delta = &mp * &data.y - &data.s0;
    let noise = &mp * &reduced.c * mp.transpose() * reduced.nu0_sq;
    let l = data.n_ics();
    match mode {
        SmoothnessMode::Common => {
            let s2 = noise.diagonal().mean();
            Ok(vec![init_kappa(prior, &delta, &data.d, s2)?])
        }
        SmoothnessMode::PerIc => (0..l)
            .map(|i| {
                init_kappa(
                    prior,
                    &delta.rows(i, 1).into_owned(),
                    &data.d.rows(i, 1).into_owned(),
                    noise[(i, i)],
                )
            })
            .collect(),
    }
}

pub(crate) fn pack(m: &DMatrix<f64>, kappas: &[f64]) -> Vec<f64> {
    let mut t = m.as_slice().to_vec();
    t.extend(kappas.iter().map(|k| k.ln()));
    t
}

pub(crate) fn unpack(theta: &[f64], q: usize, l: usize) -> (DMatrix<f64>, Vec<f64>) {
    let m = DMatrix::from_column_slice(q, l, &theta[..q * l]);
    let kappas = theta[q * l..].iter().map(|x| x.exp()).collect();
    (m, kappas)
}

/// Fits the spatial model by EM from dual-regression starting values.
pub fn fit_stica(
    reduced: &ReducedData,
    template: &Template,
    prior: &SpatialPrior,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_inputs(reduced, template)?;
    let data = EmData::new(reduced, template)?;
    fit_stica_data(&data, reduced, prior, opts)
}

/// [`fit_stica`] with explicit prior SDs.
pub fn fit_stica_data(
    data: &EmData,
    reduced: &ReducedData,
    prior: &SpatialPrior,
    opts: &FitOptions,
) -> Result<FitResult> {
    let start = Instant::now();
    let (q, l) = (data.y.nrows(), data.n_ics());
    let layout = OmegaLayout::new(Arc::clone(prior.r_pattern()), l)?;
    let m0 = initial_mixing(data)?;
    let kappa0 = match opts.initial_kappa {
        Some(k) => {
            let n = if opts.mode == SmoothnessMode::Common { 1 } else { l };
            vec![k; n]
        }
        None => initial_kappas(prior, data, &m0, reduced, opts.mode)?,
    };
    let make = |theta: &[f64]| -> Result<ModelParams> {
        let (m, kappas) = unpack(theta, q, l);
        ModelParams::new(m, kappas, reduced.nu0_sq, reduced.c.clone())
    };
    let mut at_boundary = false;
    let outcome = squarem(
        pack(&m0, &kappa0),
        |theta| {
            let params = make(theta)?;
            let (mom, _, _) = e_step_full(&params, data, prior, &layout)?;
            let m = update_mixing(&mom, data)?;
            let up = update_kappa(prior, &mom, &params.kappas, opts.mode)?;
            at_boundary |= up.at_boundary;
            Ok((pack(&m, &up.kappas), mom.log_likelihood))
        },
        &opts.squarem_options(),
    )?;
    let params = make(&outcome.theta)?;
    let (mom, omega, factor) = e_step_full(&params, data, prior, &layout)?;
    let subject_effects = &mom.mu - &data.s0;
    Ok(FitResult {
        method: Method::Stica,
        marginal_sd: mom.marginal_sd(),
        subject_ics: mom.mu.clone(),
        subject_effects,
        trace: outcome.trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
        wall_seconds: start.elapsed().as_secs_f64(),
        log_likelihood: mom.log_likelihood,
        kappa_at_boundary: at_boundary,
        posterior: Posterior {
            mean: mom.mu,
            d: mom.d,
            precision: PosteriorPrecision::Joint { omega, factor },
        },
        params,
    })
}
