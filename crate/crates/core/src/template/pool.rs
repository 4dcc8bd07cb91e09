use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const N_FACTORS: usize = 4;
const AR_COEF: f64 = 0.9;
const SHARED_WEIGHT: f64 = 0.7;

fn ar1(t: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let burn = 50;
    let mut x = 0.0;
    let mut out = Vec::with_capacity(t);
    for k in 0..t + burn {
        let z: f64 = StandardNormal.sample(rng);
        x = AR_COEF * x + z;
        if k >= burn {
            out.push(x);
        }
    }
    out
}

/// `t x p` pool of smooth, standardized timecourses sharing a few latent
/// factors, so that sampled columns are correlated.
pub fn synthetic_timecourse_pool(t: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors: Vec<Vec<f64>> = (0..N_FACTORS).map(|_| ar1(t, &mut rng)).collect();
    let mut pool = DMatrix::zeros(t, p);
    for j in 0..p {
        let own = ar1(t, &mut rng);
        let loadings: Vec<f64> = (0..N_FACTORS).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for k in 0..t {
            let shared: f64 = loadings.iter().zip(&factors).map(|(a, f)| a * f[k]).sum();
            pool[(k, j)] = SHARED_WEIGHT * shared + own[k];
        }
        let mut col = pool.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (t.max(2) - 1) as f64).sqrt();
        col /= sd;
    }
    pool
}
