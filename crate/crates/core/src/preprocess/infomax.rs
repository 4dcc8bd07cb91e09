use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::cov_eigen;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfomaxOptions {
    /// Stop when the Frobenius norm of the unmixing update falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub initial_step: f64,
}

impl Default for InfomaxOptions {
    fn default() -> Self {
        InfomaxOptions {
            tol: 1e-6,
            max_sweeps: 500,
            initial_step: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InfomaxResult {
    /// `k x V` spatial sources, unit variance.
    pub maps: DMatrix<f64>,
    /// `T x k`.
    pub mixing: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// `mean_v sum_i ln g'(s_iv)` for the logistic `g`.
fn log_density(s: &DMatrix<f64>) -> f64 {
    // ln(sigma(x)(1 - sigma(x))) = -|x| - 2 ln(1 + e^{-|x|})
    s.iter()
        .map(|&x| -x.abs() - 2.0 * (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / s.ncols() as f64
}

fn objective(w: &DMatrix<f64>, x: &DMatrix<f64>) -> Option<f64> {
    let det = w.determinant();
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(det.abs().ln() + log_density(&(w * x)))
}

/// Spatial infomax ICA with `k` components.
///
/// The data are whitened onto their leading `k` principal directions; the
/// unmixing matrix is then fitted by batch natural-gradient ascent with a
/// logistic nonlinearity and step-size backtracking.
pub fn infomax_ica(y: &DMatrix<f64>, k: usize, seed: u64, opts: &InfomaxOptions) -> Result<InfomaxResult> {
    let (t, v) = y.shape();
    if k == 0 || k > t.min(v) {
        return Err(Error::InvalidArgument(format!(
            "component count {k} outside 1..={}",
            t.min(v)
        )));
    }
    let eig = cov_eigen(y, k);
    if eig.values[k - 1] <= 0.0 {
        return Err(Error::DegenerateData("fewer than k nonzero principal components"));
    }
    // Whitened data: rows have unit variance over locations.
    let sd: Vec<f64> = eig.values[..k].iter().map(|l| l.sqrt()).collect();
    let mut x = eig.vectors.transpose() * y;
    for i in 0..k {
        x.row_mut(i).scale_mut(1.0 / sd[i]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let mut w = w0.qr().q();
    let mut f = objective(&w, &x).expect("orthogonal start is invertible");
    let mut step = opts.initial_step;
    let eye = DMatrix::<f64>::identity(k, k);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let s = &w * &x;
        let phi = s.map(|u| 1.0 - 2.0 / (1.0 + (-u).exp()));
        let grad = (&eye + &phi * s.transpose() / v as f64) * &w;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &w + &grad * step;
            if let Some(fc) = objective(&cand, &x) {
                if fc >= f {
                    let delta = (&cand - &w).norm();
                    w = cand;
                    f = fc;
                    step *= 1.2;
                    accepted = true;
                    if delta < opts.tol {
                        converged = true;
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || converged {
            converged = converged || grad.norm() * step < opts.tol;
            break;
        }
    }
    let s = &w * &x;
    let winv = w.clone().try_inverse().ok_or(Error::DegenerateData("singular unmixing matrix"))?;
    // y ~ U diag(sd) W^{-1} S
    let mut a = eig.vectors.clone();
    for i in 0..k {
        a.column_mut(i).scale_mut(sd[i]);
    }
    let mixing = a * winv;
    Ok(InfomaxResult {
        maps: s,
        mixing,
        sweeps,
        converged,
    })
}
