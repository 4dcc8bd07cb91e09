use nalgebra::DMatrix;

use super::{PosteriorMoments, SmoothnessMode, SpatialPrior};
use crate::error::{Error, Result};
use crate::sparsela::SparseSym;

/// The `kappa` search covers `ln kappa` within this distance of the current
/// value.
pub const KAPPA_SEARCH_HALF_WIDTH: f64 = 3.0;
/// Golden-section stopping width in `ln kappa`.
pub const KAPPA_SEARCH_TOL: f64 = 1e-4;

/// Coarse `ln kappa` grid scanned by [`init_kappa`] before refinement.
const INIT_LN_KAPPA_MIN: f64 = -5.3; // ~0.005
const INIT_LN_KAPPA_MAX: f64 = 3.0; // ~20
const INIT_GRID_POINTS: usize = 25;

/// `tr(A B)` for symmetric `A`, `B` given on the lower pattern of `A`
/// (`b` in the storage order of `a`).
pub fn sym_trace_product(a: &SparseSym<f64>, b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|((i, j, x), y)| if i == j { x * y } else { 2.0 * x * y })
        .sum()
}

/// Evaluates `f`, treating a failed factorization as `-inf`.
fn score(f: Result<f64>) -> Result<f64> {
    match f {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(_) | Err(Error::NotPositiveDefinite { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Maximizes `f` on `[lo, hi]` by golden-section search.
fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = score(f(c))?;
    let mut fd = score(f(d))?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = score(f(c))?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = score(f(d))?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

fn row(x: &DMatrix<f64>, l: usize) -> Vec<f64> {
    x.row(l).iter().copied().collect()
}

/// Sum over `ics` of
/// `ln|R^{-1}| - tr(R^{-1} Omega^{-1}_ll) - tr(R^{-1} W_ll) + u_l' R^{-1} v_l`
/// at `kappa`, with the posterior quantities held fixed.
///
/// The last two terms are evaluated as `-z_l' R^{-1} z_l` with
/// `z = Omega^{-1} m - D^{-1} s0`, which is the same quantity.
pub fn kappa_objective(prior: &SpatialPrior, moments: &PosteriorMoments, kappa: f64, ics: &[usize]) -> Result<f64> {
    let r = prior.precision(kappa)?;
    let logdet = prior.factor(&r)?.logdet();
    let mut f = 0.0;
    for &l in ics {
        let z = row(&moments.z, l);
        f += logdet - sym_trace_product(&r, &moments.prior_blocks[l]) - r.quad_form(&z, &z);
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KappaUpdate {
    pub kappas: Vec<f64>,
    /// Some maximizer landed at the edge of its search bracket.
    pub at_boundary: bool,
}

fn search(prior: &SpatialPrior, moments: &PosteriorMoments, current: f64, ics: &[usize]) -> Result<(f64, bool)> {
    if !(current > 0.0 && current.is_finite()) {
        return Err(Error::NonPositiveKappa(current));
    }
    let c = current.ln();
    let (lo, hi) = (c - KAPPA_SEARCH_HALF_WIDTH, c + KAPPA_SEARCH_HALF_WIDTH);
    let (best, fbest) = golden_max(|lk| kappa_objective(prior, moments, lk.exp(), ics), lo, hi, KAPPA_SEARCH_TOL)?;
    let fcur = score(kappa_objective(prior, moments, current, ics))?;
    if fcur >= fbest {
        return Ok((current, false));
    }
    let edge = best - lo < 2.0 * KAPPA_SEARCH_TOL || hi - best < 2.0 * KAPPA_SEARCH_TOL;
    Ok((best.exp(), edge))
}

/// M-step for `kappa`: golden-section search in `ln kappa` around the
/// current value, keeping the current value if nothing scores higher.
pub fn update_kappa(
    prior: &SpatialPrior,
    moments: &PosteriorMoments,
    current: &[f64],
    mode: SmoothnessMode,
) -> Result<KappaUpdate> {
    let l = moments.mu.nrows();
    if current.is_empty() {
        return Err(Error::InvalidArgument("no current kappa".into()));
    }
    match mode {
        SmoothnessMode::Common => {
            let ics: Vec<usize> = (0..l).collect();
            let (k, edge) = search(prior, moments, current[0], &ics)?;
            Ok(KappaUpdate {
                kappas: vec![k],
                at_boundary: edge,
            })
        }
        SmoothnessMode::PerIc => {
            let mut kappas = Vec::with_capacity(l);
            let mut at_boundary = false;
            for ic in 0..l {
                let cur = if current.len() == 1 { current[0] } else { current[ic] };
                let (k, edge) = search(prior, moments, cur, &[ic])?;
                kappas.push(k);
                at_boundary |= edge;
            }
            Ok(KappaUpdate { kappas, at_boundary })
        }
    }
}

/// Marginal log-likelihood (times two, up to a constant) of `delta_hat`
/// under `delta_hat = D x + e`, `x ~ N(0, R)`, `e ~ N(0, sigma_sq I)`,
/// summed over the rows of `delta_hat` with a shared `R`:
///
/// `-ln|K| + ln|R^{-1}| - V ln sigma^2 - delta' delta / sigma^2
///  + delta' D K^{-1} D delta / sigma^4`, `K = R^{-1} + D^2 / sigma^2`.
pub fn init_kappa_objective(
    prior: &SpatialPrior,
    delta_hat: &DMatrix<f64>,
    d: &DMatrix<f64>,
    sigma_sq: f64,
    kappa: f64,
) -> Result<f64> {
    let v = prior.n_locations();
    if delta_hat.ncols() != v || d.shape() != delta_hat.shape() {
        return Err(Error::DimensionMismatch {
            expected: v,
            got: delta_hat.ncols(),
            context: "initial estimate length",
        });
    }
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma_sq must be positive, got {sigma_sq}")));
    }
    let r = prior.precision(kappa)?;
    let logdet_r = prior.factor(&r)?.logdet();
    let diag_pos: Vec<usize> = (0..v)
        .map(|i| r.pattern().find(i, i).expect("diagonal is always stored"))
        .collect();
    let mut total = 0.0;
    for l in 0..delta_hat.nrows() {
        let mut k = r.clone();
        {
            let vals = k.values_mut();
            for (i, &p) in diag_pos.iter().enumerate() {
                vals[p] += d[(l, i)] * d[(l, i)] / sigma_sq;
            }
        }
        let fk = prior.factor(&k)?;
        let dd: Vec<f64> = (0..v).map(|i| d[(l, i)] * delta_hat[(l, i)]).collect();
        let x = fk.solve(&dd)?;
        let dtd: f64 = delta_hat.row(l).iter().map(|x| x * x).sum();
        let quad: f64 = dd.iter().zip(&x).map(|(a, b)| a * b).sum();
        total += -fk.logdet() + logdet_r - v as f64 * sigma_sq.ln() - dtd / sigma_sq + quad / (sigma_sq * sigma_sq);
    }
    Ok(total)
}

/// Initial `kappa` maximizing [`init_kappa_objective`]: a coarse grid in
/// `ln kappa` followed by golden-section refinement around the best point.
pub fn init_kappa(prior: &SpatialPrior, delta_hat: &DMatrix<f64>, d: &DMatrix<f64>, sigma_sq: f64) -> Result<f64> {
    let step = (INIT_LN_KAPPA_MAX - INIT_LN_KAPPA_MIN) / (INIT_GRID_POINTS - 1) as f64;
    let mut best = (INIT_LN_KAPPA_MIN, f64::NEG_INFINITY);
    for i in 0..INIT_GRID_POINTS {
        let lk = INIT_LN_KAPPA_MIN + step * i as f64;
        let f = score(init_kappa_objective(prior, delta_hat, d, sigma_sq, lk.exp()))?;
        if f > best.1 {
            best = (lk, f);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::DegenerateData("initial kappa objective is not finite on the grid"));
    }
    let (lk, f) = golden_max(
        |lk| init_kappa_objective(prior, delta_hat, d, sigma_sq, lk.exp()),
        best.0 - step,
        best.0 + step,
        KAPPA_SEARCH_TOL,
    )?;
    Ok(if f >= best.1 { lk.exp() } else { best.0.exp() })
}
