use nalgebra::DMatrix;

use super::{cov_eigen, dual_regression, infomax_ica, InfomaxOptions};
use crate::error::Result;
use crate::template::Template;

/// Multiplier on the `#params * ln(min(T, V)) / 2` penalty.
pub const PPCA_PENALTY_WEIGHT: f64 = 1.0;

/// Eigenvalues below this fraction of the largest are treated as zero.
const EIG_FLOOR: f64 = 1e-10;

/// Latent dimension of a residual by penalized probabilistic-PCA profile
/// likelihood.
///
/// For each `k` the PPCA log-likelihood of the covariance spectrum
/// (`n = max(T, V)` samples in `p = min(T, V)` dimensions) is penalized by
/// `weight * params(k) * ln(p) / 2`, with
/// `params(k) = p k - k (k - 1) / 2 + k + 1`; the maximizing `k` is returned.
pub fn estimate_nuisance_count(r: &DMatrix<f64>, weight: f64) -> usize {
    let (t, v) = r.shape();
    if t < 2 || v < 2 {
        return 0;
    }
    let eig = cov_eigen(r, 0);
    let lmax = eig.values.first().copied().unwrap_or(0.0);
    if !(lmax > 0.0) {
        return 0;
    }
    let vals: Vec<f64> = eig
        .values
        .iter()
        .copied()
        .take_while(|&l| l > EIG_FLOOR * lmax)
        .collect();
    let p = vals.len();
    if p < 2 {
        return 0;
    }
    let n = t.max(v) as f64;
    let pen_log = (t.min(v) as f64).ln();
    let total: f64 = vals.iter().sum();
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut head_log = 0.0;
    let mut head_sum = 0.0;
    for k in 0..p {
        if k > 0 {
            head_log += vals[k - 1].ln();
            head_sum += vals[k - 1];
        }
        let rest = (p - k) as f64;
        let sigma2 = (total - head_sum) / rest;
        if !(sigma2 > 0.0) {
            break;
        }
        let ll = -0.5 * n * (head_log + rest * sigma2.ln());
        let kf = k as f64;
        let params = p as f64 * kf - kf * (kf - 1.0) / 2.0 + kf + 1.0;
        let score = ll - weight * params * pen_log / 2.0;
        if score > best.1 {
            best = (k, score);
        }
    }
    best.0
}

#[derive(Clone, Debug)]
pub struct NuisanceOptions {
    pub iterations: usize,
    /// Skip order selection and use this many nuisance components.
    pub forced_count: Option<usize>,
    pub penalty_weight: f64,
    pub seed: u64,
    pub infomax: InfomaxOptions,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        NuisanceOptions {
            iterations: 1,
            forced_count: None,
            penalty_weight: PPCA_PENALTY_WEIGHT,
            seed: 0,
            infomax: InfomaxOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NuisanceRemoval {
    pub y_clean: DMatrix<f64>,
    /// Nuisance component count chosen at each iteration.
    pub counts: Vec<usize>,
}

/// Alternates template dual regression and nuisance ICA on the residual,
/// subtracting the nuisance fit from the original data.
pub fn remove_nuisance(y: &DMatrix<f64>, template: &Template, opts: &NuisanceOptions) -> Result<NuisanceRemoval> {
    let mut y_clean = y.clone();
    let mut counts = Vec::with_capacity(opts.iterations);
    for it in 0..opts.iterations {
        let dr = dual_regression(&y_clean, template.mean())?;
        let resid = y - dr.fitted();
        let k = opts
            .forced_count
            .unwrap_or_else(|| estimate_nuisance_count(&resid, opts.penalty_weight))
            .min(resid.nrows().min(resid.ncols()).saturating_sub(1));
        counts.push(k);
        if k == 0 {
            y_clean = y.clone();
            break;
        }
        let ica = infomax_ica(&resid, k, opts.seed.wrapping_add(it as u64), &opts.infomax)?;
        y_clean = y - ica.mixing * ica.maps;
    }
    Ok(NuisanceRemoval { y_clean, counts })
}
