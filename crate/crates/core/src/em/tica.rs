use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;

use super::estep::{ic_major, PosteriorMoments};
use super::fit::{check_inputs, initial_mixing, pack, unpack, FitOptions, FitResult, Method, Posterior, PosteriorPrecision};
use super::squarem::squarem;
use super::{update_mixing, DataTerm, EmData, ModelParams};
use crate::error::{Error, Result};
use crate::preprocess::ReducedData;
use crate::template::Template;

/// E-step with independent priors `s_l(v) ~ N(s0_l(v), D_l(v)^2)`; each
/// location is an `L x L` problem `Omega(v) = I + D(v) A D(v)`.
pub fn tica_e_step(params: &ModelParams, data: &EmData) -> Result<PosteriorMoments> {
    let (l, v) = (data.n_ics(), data.n_locations());
    let dt = DataTerm::new(params, data)?;
    let mut z = DMatrix::zeros(l, v);
    let mut blocks = Vec::with_capacity(v);
    let mut logdet = 0.0;
    let mut quad_fit = 0.0;
    for loc in 0..v {
        let dv = data.d.column(loc);
        let omega = DMatrix::from_fn(l, l, |i, j| {
            dv[i] * dt.a[(i, j)] * dv[j] + if i == j { 1.0 } else { 0.0 }
        });
        let chol = omega
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { column: loc, pivot: f64::NAN })?;
        logdet += 2.0 * chol.l().diagonal().map(f64::ln).sum();
        let rhs = dv.component_mul(&dt.r.column(loc));
        let zv = chol.solve(&rhs);
        quad_fit += rhs.dot(&zv);
        z.set_column(loc, &zv);
        let inv = chol.inverse();
        blocks.push((&inv + inv.transpose()) * 0.5);
    }
    let mu = &data.s0 + data.d.component_mul(&z);
    let u = data.s0.zip_map(&data.d, |s, d| s / d);
    let m = ic_major(&(data.d.component_mul(&dt.b) + &u));
    let omega_inv_m = ic_major(&(&u + &z));
    let prior_blocks = (0..l).map(|i| blocks.iter().map(|b| b[(i, i)]).collect()).collect();
    let n_obs = (data.y.nrows() * v) as f64;
    let log_likelihood =
        -0.5 * (n_obs * (2.0 * PI).ln() + v as f64 * dt.logdet_noise + logdet + dt.resid_quad - quad_fit);
    Ok(PosteriorMoments {
        mu,
        z,
        m,
        omega_inv_m,
        location_blocks: blocks,
        prior_blocks,
        log_likelihood,
        d: data.d.clone(),
        s0: data.s0.clone(),
    })
}

/// Fits the non-spatial model by EM over the mixing matrix.
pub fn fit_tica(reduced: &ReducedData, template: &Template, opts: &FitOptions) -> Result<FitResult> {
    check_inputs(reduced, template)?;
    let data = EmData::new(reduced, template)?;
    fit_tica_data(&data, reduced, opts)
}

/// [`fit_tica`] with explicit prior SDs.
pub fn fit_tica_data(data: &EmData, reduced: &ReducedData, opts: &FitOptions) -> Result<FitResult> {
    let start = Instant::now();
    let (q, l) = (data.y.nrows(), data.n_ics());
    let make = |theta: &[f64]| {
        let (m, _) = unpack(theta, q, l);
        ModelParams::new(m, vec![], reduced.nu0_sq, reduced.c.clone())
    };
    let outcome = squarem(
        pack(&initial_mixing(data)?, &[]),
        |theta| {
            let mom = tica_e_step(&make(theta)?, data)?;
            Ok((pack(&update_mixing(&mom, data)?, &[]), mom.log_likelihood))
        },
        &opts.squarem_options(),
    )?;
    let params = make(&outcome.theta)?;
    let mom = tica_e_step(&params, data)?;
    Ok(FitResult {
        method: Method::Tica,
        marginal_sd: mom.marginal_sd(),
        subject_ics: mom.mu.clone(),
        subject_effects: &mom.mu - &data.s0,
        trace: outcome.trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
        wall_seconds: start.elapsed().as_secs_f64(),
        log_likelihood: mom.log_likelihood,
        kappa_at_boundary: false,
        posterior: Posterior {
            mean: mom.mu,
            d: mom.d,
            precision: PosteriorPrecision::Local(mom.location_blocks),
        },
        params,
    })
}
