use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::em::{FitResult, Posterior, PosteriorPrecision};
use crate::error::{Error, Result};
use crate::template::subject_seed;

pub const DEFAULT_EXCURSION_SAMPLES: usize = 10_000;
pub const MIN_EXCURSION_SAMPLES: usize = 1000;

/// Draws per seeded chunk. Results do not depend on how chunks are scheduled.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Direction {
    /// `s(v) > gamma`.
    #[default]
    Positive,
    /// `s(v) < gamma`.
    Negative,
}

impl Direction {
    #[inline]
    pub fn exceeds(self, value: f64, gamma: f64) -> bool {
        match self {
            Direction::Positive => value > gamma,
            Direction::Negative => value < gamma,
        }
    }

    /// `P(s > gamma)` or `P(s < gamma)` for `s ~ N(mean, sd^2)`.
    pub fn marginal_prob(self, mean: f64, sd: f64, gamma: f64) -> f64 {
        if sd > 0.0 {
            let z = match self {
                Direction::Positive => (mean - gamma) / sd,
                Direction::Negative => (gamma - mean) / sd,
            };
            std_normal().cdf(z)
        } else if self.exceeds(mean, gamma) {
            1.0
        } else {
            0.0
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" | "positive" => Ok(Direction::Positive),
            "neg" | "negative" => Ok(Direction::Negative),
            _ => Err(Error::InvalidArgument(format!("unknown direction {s:?}"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Positive => "pos",
            Direction::Negative => "neg",
        })
    }
}

pub(crate) fn std_normal() -> Normal {
    Normal::standard()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionResult {
    pub mask: Vec<bool>,
    pub gamma: f64,
    pub alpha: f64,
    pub direction: Direction,
    /// Estimated probability that every masked location exceeds `gamma`.
    pub attained_joint_prob: f64,
    pub n_samples: usize,
}

impl ExcursionResult {
    pub fn size(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Zero-mean Gaussian field with a sampler.
pub trait FieldSampler {
    fn n_locations(&self) -> usize;

    fn marginal_sd(&self) -> Vec<f64>;

    /// `V x k` matrix of independent draws.
    fn draw(&self, rng: &mut ChaCha8Rng, k: usize) -> Result<DMatrix<f64>>;
}

/// Field with an explicit (possibly singular) covariance.
#[derive(Clone, Debug)]
pub struct CovarianceField {
    /// `cov = root root'`.
    root: DMatrix<f64>,
    sd: Vec<f64>,
}

impl CovarianceField {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::DimensionMismatch {
                expected: cov.nrows(),
                got: cov.ncols(),
                context: "covariance must be square",
            });
        }
        let sym = (cov + cov.transpose()) * 0.5;
        let sd = sym.diagonal().iter().map(|x| x.max(0.0).sqrt()).collect();
        let eig = sym.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * eig.eigenvalues.amax().max(1.0)) {
            return Err(Error::InvalidArgument("covariance is not positive semidefinite".into()));
        }
        let mut root = eig.eigenvectors;
        for (mut c, l) in root.column_iter_mut().zip(eig.eigenvalues.iter()) {
            c *= l.max(0.0).sqrt();
        }
        Ok(CovarianceField { root, sd })
    }
}

impl FieldSampler for CovarianceField {
    fn n_locations(&self) -> usize {
        self.root.nrows()
    }

    fn marginal_sd(&self) -> Vec<f64> {
        self.sd.clone()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, k: usize) -> Result<DMatrix<f64>> {
        let n = self.root.nrows();
        let z = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
        Ok(&self.root * z)
    }
}

/// One IC of a fitted posterior, `s_l = mean_l + D_l x_l`.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorField<'a> {
    posterior: &'a Posterior,
    sd: &'a DMatrix<f64>,
    ic: usize,
}

impl<'a> PosteriorField<'a> {
    /// `marginal_sd` is `L x V`.
    pub fn new(posterior: &'a Posterior, marginal_sd: &'a DMatrix<f64>, ic: usize) -> Result<Self> {
        let (l, v) = posterior.mean.shape();
        if ic >= l {
            return Err(Error::InvalidArgument(format!("IC {ic} out of range for {l} ICs")));
        }
        if marginal_sd.shape() != (l, v) {
            return Err(Error::DimensionMismatch {
                expected: v,
                got: marginal_sd.ncols(),
                context: "marginal SD map",
            });
        }
        Ok(PosteriorField {
            posterior,
            sd: marginal_sd,
            ic,
        })
    }

    pub fn from_fit(fit: &'a FitResult, ic: usize) -> Result<Self> {
        Self::new(&fit.posterior, &fit.marginal_sd, ic)
    }
}

impl FieldSampler for PosteriorField<'_> {
    fn n_locations(&self) -> usize {
        self.posterior.mean.ncols()
    }

    fn marginal_sd(&self) -> Vec<f64> {
        self.sd.row(self.ic).iter().copied().collect()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, k: usize) -> Result<DMatrix<f64>> {
        let (l, v) = self.posterior.mean.shape();
        let d = &self.posterior.d;
        let ic = self.ic;
        match &self.posterior.precision {
            PosteriorPrecision::Joint { factor, .. } => {
                let z = DMatrix::from_fn(l * v, k, |_, _| StandardNormal.sample(rng));
                let x = factor.correlate_many(&z)?;
                Ok(DMatrix::from_fn(v, k, |loc, c| d[(ic, loc)] * x[(ic * v + loc, c)]))
            }
            PosteriorPrecision::Local(blocks) => {
                let z = DMatrix::from_fn(v, k, |_, _| { let x: f64 = StandardNormal.sample(rng); x });
                Ok(DMatrix::from_fn(v, k, |loc, c| {
                    d[(ic, loc)] * blocks[loc][(ic, ic)].max(0.0).sqrt() * z[(loc, c)]
                }))
            }
        }
    }
}

/// Largest set among the locations ranked by marginal exceedance
/// probability whose joint exceedance probability is at least `1 - alpha`.
///
/// Only locations with marginal probability at least `1 - alpha` are
/// candidates. The joint probability of each top-`k` set is the fraction of
/// posterior draws in which all `k` locations exceed `gamma`.
pub fn excursion_set(
    mean: &[f64],
    field: &dyn FieldSampler,
    gamma: f64,
    alpha: f64,
    direction: Direction,
    n_samples: usize,
    seed: u64,
) -> Result<ExcursionResult> {
    let v = mean.len();
    if field.n_locations() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            got: field.n_locations(),
            context: "field and mean lengths",
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_samples < MIN_EXCURSION_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_EXCURSION_SAMPLES} samples, got {n_samples}"
        )));
    }
    let std_error = (alpha * (1.0 - alpha) / n_samples as f64).sqrt();
    if std_error > alpha / 10.0 {
        return Err(Error::InsufficientSamples { n_samples, std_error });
    }
    let level = 1.0 - alpha;
    let sd = field.marginal_sd();
    let p: Vec<f64> = (0..v).map(|i| direction.marginal_prob(mean[i], sd[i], gamma)).collect();
    let mut order: Vec<usize> = (0..v).filter(|&i| p[i] >= level).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let k_max = order.len();

    // survive[k] counts draws whose first failing rank is at least k.
    let mut first_fail = vec![0usize; k_max + 1];
    if k_max > 0 {
        let mut done = 0;
        let mut chunk = 0u64;
        while done < n_samples {
            let k = CHUNK.min(n_samples - done);
            let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(seed, chunk));
            let x = field.draw(&mut rng, k)?;
            for c in 0..k {
                let fail = order
                    .iter()
                    .position(|&loc| !direction.exceeds(mean[loc] + x[(loc, c)], gamma))
                    .unwrap_or(k_max);
                first_fail[fail] += 1;
            }
            done += k;
            chunk += 1;
        }
    } else {
        first_fail[0] = n_samples;
    }
    let mut survive = vec![0usize; k_max + 1];
    let mut acc = 0;
    for k in (0..=k_max).rev() {
        acc += first_fail[k];
        survive[k] = acc;
    }
    let prob = |k: usize| survive[k] as f64 / n_samples as f64;
    // Nonincreasing in k: binary search, then confirm the neighbours.
    let (mut k, mut hi) = (0, k_max);
    while k < hi {
        let mid = (k + hi + 1) / 2;
        if prob(mid) >= level {
            k = mid;
        } else {
            hi = mid - 1;
        }
    }
    while k < k_max && prob(k + 1) >= level {
        k += 1;
    }
    while k > 0 && prob(k) < level {
        k -= 1;
    }
    let mut mask = vec![false; v];
    for &loc in &order[..k] {
        mask[loc] = true;
    }
    Ok(ExcursionResult {
        mask,
        gamma,
        alpha,
        direction,
        attained_joint_prob: prob(k),
        n_samples,
    })
}

/// Excursion set of the subject effect `s_l - s0_l` above or below zero.
pub fn deviation_set(
    fit: &FitResult,
    ic: usize,
    alpha: f64,
    direction: Direction,
    n_samples: usize,
    seed: u64,
) -> Result<ExcursionResult> {
    let field = PosteriorField::from_fit(fit, ic)?;
    let mean: Vec<f64> = fit.subject_effects.row(ic).iter().copied().collect();
    excursion_set(&mean, &field, 0.0, alpha, direction, n_samples, seed)
}
