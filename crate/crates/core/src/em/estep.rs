use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::omega::{build_omega, prior_for, OmegaLayout};
use super::{DataTerm, EmData, ModelParams, SpatialPrior};
use crate::error::{Error, Result};
use crate::sparsela::{partial_inverse, CholFactor, SparseSym};

/// Posterior of the latent ICs given the current parameters.
///
/// With `Omega = R^{-1} + D P' M' (nu0^2 C)^{-1} M P D`, the posterior is
/// `N(D Omega^{-1} m, D Omega^{-1} D)`.
#[derive(Clone, Debug)]
pub struct PosteriorMoments {
    /// `L x V` posterior mean.
    pub mu: DMatrix<f64>,
    /// `L x V`, `D^{-1} (mu - s0)`; finite even where `D = 0`.
    pub z: DMatrix<f64>,
    /// IC-major `m = D P' M' (nu0^2 C)^{-1} y + R^{-1} D^{-1} s0`.
    /// Non-finite where `D = 0` and `s0 != 0`.
    pub m: Vec<f64>,
    /// IC-major `Omega^{-1} m`, same caveat as `m`.
    pub omega_inv_m: Vec<f64>,
    /// `L x L` block of `Omega^{-1}` at each location.
    pub location_blocks: Vec<DMatrix<f64>>,
    /// Entries of the `l`-th diagonal block of `Omega^{-1}` on the prior
    /// pattern, in its storage order. Diagonal-only for the non-spatial model.
    pub prior_blocks: Vec<Vec<f64>>,
    /// `ln p(y | theta)`.
    pub log_likelihood: f64,
    /// `L x V` prior SDs used.
    pub d: DMatrix<f64>,
    /// `L x V` template mean used.
    pub s0: DMatrix<f64>,
}

impl PosteriorMoments {
    /// `sqrt(diag(D Omega^{-1} D))` as an `L x V` map.
    pub fn marginal_sd(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.mu.nrows(), self.mu.ncols(), |l, v| {
            self.d[(l, v)] * self.location_blocks[v][(l, l)].max(0.0).sqrt()
        })
    }

    /// `D^{-1} s0`, IC-major.
    pub fn u(&self) -> Vec<f64> {
        ic_major(&self.s0.zip_map(&self.d, |s, d| s / d))
    }
}

pub(crate) fn ic_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

pub(crate) fn from_ic_major(l: usize, v: usize, x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(l, v, x)
}

/// Spatial E-step; also returns `Omega` and its factor.
pub(crate) fn e_step_full(
    params: &ModelParams,
    data: &EmData,
    prior: &SpatialPrior,
    layout: &OmegaLayout,
) -> Result<(PosteriorMoments, SparseSym<f64>, CholFactor<f64>)> {
    let (l, v) = (data.n_ics(), data.n_locations());
    if layout.n_ics() != l || layout.n_locations() != v || prior.n_locations() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            got: prior.n_locations(),
            context: "prior, layout and data location counts",
        });
    }
    if params.kappas.is_empty() {
        return Err(Error::InvalidArgument("spatial model needs kappa".into()));
    }
    let dt = DataTerm::new(params, data)?;

    let distinct = if params.kappas.len() == 1 { 1 } else { l };
    let mut r_inv = Vec::with_capacity(distinct);
    let mut r_logdet = Vec::with_capacity(distinct);
    for i in 0..distinct {
        let r = prior.precision(params.kappa(i))?;
        r_logdet.push(prior.factor(&r)?.logdet());
        r_inv.push(r);
    }
    let sum_r_logdet: f64 = (0..l).map(|i| r_logdet[if distinct == 1 { 0 } else { i }]).sum();

    let omega = build_omega(layout, &r_inv, &data.d, &dt.a)?;
    let factor = layout.symbolic().factor(&omega)?;

    // Omega^{-1} m = D^{-1} s0 + Omega^{-1} D r, which avoids forming
    // D^{-1} s0 inside the solve.
    let rhs = ic_major(&data.d.component_mul(&dt.r));
    let zvec = factor.solve(&rhs)?;
    let z = from_ic_major(l, v, &zvec);
    let mu = &data.s0 + data.d.component_mul(&z);

    let u = ic_major(&data.s0.zip_map(&data.d, |s, d| s / d));
    let mut m = ic_major(&data.d.component_mul(&dt.b));
    for ic in 0..l {
        let ru = prior_for(&r_inv, ic).mul_vec(&u[ic * v..(ic + 1) * v])?;
        for (dst, x) in m[ic * v..(ic + 1) * v].iter_mut().zip(ru) {
            *dst += x;
        }
    }
    let omega_inv_m: Vec<f64> = u.iter().zip(&zvec).map(|(a, b)| a + b).collect();

    let sel = partial_inverse(&factor, layout.pattern())?;
    let sv = sel.values();
    let location_blocks = (0..v)
        .map(|loc| DMatrix::from_fn(l, l, |i, j| sv[layout.loc_pos(loc, i, j)]))
        .collect();
    let prior_blocks = (0..l)
        .map(|ic| layout.r_pos(ic).iter().map(|&p| sv[p]).collect())
        .collect();

    let n_obs = (data.y.nrows() * v) as f64;
    let quad = dt.resid_quad - rhs.iter().zip(&zvec).map(|(a, b)| a * b).sum::<f64>();
    let logdet = v as f64 * dt.logdet_noise + factor.logdet() - sum_r_logdet;
    let log_likelihood = -0.5 * (n_obs * (2.0 * PI).ln() + logdet + quad);

    Ok((
        PosteriorMoments {
            mu,
            z,
            m,
            omega_inv_m,
            location_blocks,
            prior_blocks,
            log_likelihood,
            d: data.d.clone(),
            s0: data.s0.clone(),
        },
        omega,
        factor,
    ))
}

/// Posterior moments under the spatial prior.
pub fn e_step(
    params: &ModelParams,
    data: &EmData,
    prior: &SpatialPrior,
    layout: &OmegaLayout,
) -> Result<PosteriorMoments> {
    e_step_full(params, data, prior, layout).map(|r| r.0)
}
