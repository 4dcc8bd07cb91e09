use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dims, PopulationSpec};
use crate::error::{Error, Result};

/// Kernel half-width in standard deviations.
const KERNEL_RADIUS_SD: f64 = 4.0;

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
}

/// Deterministic per-subject seed (splitmix64 of the master seed and index).
pub fn subject_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `amplitude * exp(-d^2 / (2 sigma^2))` around `center` (0-based row, col).
pub fn gaussian_peak_map(dims: Dims, center: (usize, usize), amplitude: f64, fwhm: f64) -> Result<Vec<f64>> {
    if !(fwhm > 0.0) {
        return Err(Error::InvalidArgument(format!("fwhm must be positive, got {fwhm}")));
    }
    if center.0 >= dims.rows || center.1 >= dims.cols {
        return Err(Error::InvalidArgument(format!(
            "peak centre {center:?} outside {}x{} grid",
            dims.rows, dims.cols
        )));
    }
    let s2 = 2.0 * fwhm_to_sigma(fwhm).powi(2);
    let mut map = Vec::with_capacity(dims.len());
    for r in 0..dims.rows {
        for c in 0..dims.cols {
            let dr = r as f64 - center.0 as f64;
            let dc = c as f64 - center.1 as f64;
            map.push(amplitude * (-(dr * dr + dc * dc) / s2).exp());
        }
    }
    Ok(map)
}

/// Generating mean and variance maps (`L x V`) on a pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeMaps {
    pub dims: Dims,
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

pub fn generate_population(spec: &PopulationSpec) -> Result<GenerativeMaps> {
    if !(spec.var_scale >= 0.0) {
        return Err(Error::InvalidArgument("variance scale must be non-negative".into()));
    }
    let v = spec.dims.len();
    let mut mean = DMatrix::zeros(spec.peaks.len(), v);
    for (l, p) in spec.peaks.iter().enumerate() {
        let map = gaussian_peak_map(spec.dims, p.center, p.amplitude, p.fwhm)?;
        for (i, x) in map.into_iter().enumerate() {
            mean[(l, i)] = x;
        }
    }
    if mean.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidArgument("peak amplitudes must be non-negative".into()));
    }
    let var = &mean * spec.var_scale;
    Ok(GenerativeMaps {
        dims: spec.dims,
        mean,
        var,
    })
}

fn kernel_1d(sigma: f64) -> Vec<f64> {
    let h = (KERNEL_RADIUS_SD * sigma).ceil() as i64;
    let k: Vec<f64> = (-h..=h)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|x| x / s).collect()
}

/// Separable Gaussian smoothing with zero padding; `fwhm == 0` is the
/// identity.
pub fn gaussian_smooth(map: &[f64], dims: Dims, fwhm: f64) -> Vec<f64> {
    if fwhm <= 0.0 {
        return map.to_vec();
    }
    let k = kernel_1d(fwhm_to_sigma(fwhm));
    let h = (k.len() / 2) as i64;
    let (rows, cols) = (dims.rows as i64, dims.cols as i64);
    let mut tmp = vec![0.0; map.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let cc = c + t as i64 - h;
                if (0..cols).contains(&cc) {
                    acc += w * map[(r * cols + cc) as usize];
                }
            }
            tmp[(r * cols + c) as usize] = acc;
        }
    }
    let mut out = vec![0.0; map.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let rr = r + t as i64 - h;
                if (0..rows).contains(&rr) {
                    acc += w * tmp[(rr * cols + c) as usize];
                }
            }
            out[(r * cols + c) as usize] = acc;
        }
    }
    out
}

/// Variance at `pixel` of the smoothed field when the unsmoothed field is
/// independent with variances `var`.
fn smoothed_variance_at(var: &[f64], dims: Dims, fwhm: f64, pixel: usize) -> f64 {
    if fwhm <= 0.0 {
        return var[pixel];
    }
    let k = kernel_1d(fwhm_to_sigma(fwhm));
    let h = (k.len() / 2) as i64;
    let (pr, pc) = ((pixel / dims.cols) as i64, (pixel % dims.cols) as i64);
    let mut acc = 0.0;
    for (a, wr) in k.iter().enumerate() {
        let r = pr + a as i64 - h;
        if !(0..dims.rows as i64).contains(&r) {
            continue;
        }
        for (b, wc) in k.iter().enumerate() {
            let c = pc + b as i64 - h;
            if !(0..dims.cols as i64).contains(&c) {
                continue;
            }
            let w = wr * wc;
            acc += w * w * var[r as usize * dims.cols + c as usize];
        }
    }
    acc
}

/// True subject-level quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTruth {
    /// `L x V`.
    pub ics: DMatrix<f64>,
    /// `L x V`.
    pub effects: DMatrix<f64>,
    /// `T x L`; empty until timeseries are simulated.
    pub mixing: DMatrix<f64>,
    pub noise_sd: f64,
}

/// Draws smooth subject effects and adds them to the generating mean.
///
/// Each effect map is white noise with variance `gen.var`, smoothed, then
/// scaled by one factor so its variance at the peak of `gen.var` equals the
/// generating variance there.
pub fn simulate_subject(gen: &GenerativeMaps, smooth_fwhm: f64, seed: u64) -> Result<SubjectTruth> {
    if gen.var.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("generating variance must be non-negative".into()));
    }
    let (l_count, v) = gen.mean.shape();
    if v != gen.dims.len() || gen.var.shape() != gen.mean.shape() {
        return Err(Error::DimsMismatch {
            len: v,
            rows: gen.dims.rows,
            cols: gen.dims.cols,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut effects = DMatrix::zeros(l_count, v);
    for l in 0..l_count {
        let var: Vec<f64> = gen.var.row(l).iter().copied().collect();
        let raw: Vec<f64> = var
            .iter()
            .map(|&s2| {
                let z: f64 = StandardNormal.sample(&mut rng);
                s2.sqrt() * z
            })
            .collect();
        let peak = var
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > var[best] { i } else { best });
        let sm = gaussian_smooth(&raw, gen.dims, smooth_fwhm);
        let sv = smoothed_variance_at(&var, gen.dims, smooth_fwhm, peak);
        let scale = if sv > 0.0 { (var[peak] / sv).sqrt() } else { 0.0 };
        for (i, x) in sm.into_iter().enumerate() {
            effects[(l, i)] = scale * x;
        }
    }
    Ok(SubjectTruth {
        ics: &gen.mean + &effects,
        effects,
        mixing: DMatrix::zeros(0, l_count),
        noise_sd: 0.0,
    })
}

/// `n` subjects with seeds derived from `master_seed`.
pub fn simulate_population(
    gen: &GenerativeMaps,
    smooth_fwhm: f64,
    n: usize,
    master_seed: u64,
) -> Result<Vec<SubjectTruth>> {
    (0..n)
        .map(|i| simulate_subject(gen, smooth_fwhm, subject_seed(master_seed, i as u64)))
        .collect()
}

/// Output of [`simulate_timeseries`].
#[derive(Clone, Debug)]
pub struct TimeseriesDraw {
    /// `T x V`.
    pub y: DMatrix<f64>,
    /// `T x L`, columns standardized.
    pub mixing: DMatrix<f64>,
    /// Pool columns used, in IC order.
    pub pool_columns: Vec<usize>,
}

/// `Y = M S + E`: `M` takes `L` pool columns without replacement, each
/// standardized to mean 0 and SD 1; `E` is iid `N(0, noise_sd^2)`.
pub fn simulate_timeseries(
    ics: &DMatrix<f64>,
    pool: &DMatrix<f64>,
    noise_sd: f64,
    seed: u64,
) -> Result<TimeseriesDraw> {
    let (l_count, v) = ics.shape();
    let (t, p) = pool.shape();
    if p < l_count {
        return Err(Error::PoolTooSmall {
            available: p,
            requested: l_count,
        });
    }
    if t < l_count || t < 2 {
        return Err(Error::InvalidDims { rows: t, cols: l_count });
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument("noise SD must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = sample(&mut rng, p, l_count).into_vec();
    let mut mixing = DMatrix::zeros(t, l_count);
    for (l, &c) in cols.iter().enumerate() {
        let col = pool.column(c);
        let mean = col.mean();
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ConstantColumn(c));
        }
        for k in 0..t {
            mixing[(k, l)] = (col[k] - mean) / sd;
        }
    }
    let mut y = &mixing * ics;
    if noise_sd > 0.0 {
        for k in 0..v {
            for r in 0..t {
                let z: f64 = StandardNormal.sample(&mut rng);
                y[(r, k)] += noise_sd * z;
            }
        }
    }
    Ok(TimeseriesDraw {
        y,
        mixing,
        pool_columns: cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{estimate_template, PeakSpec};

    #[test]
    fn fwhm_conversion() {
        assert!((fwhm_to_sigma(30.0) - 12.7397).abs() < 2e-4);
        assert!((fwhm_to_sigma(5.0) - 2.12).abs() < 5e-3);
        assert!((fwhm_to_sigma(5.0) - 2.1233).abs() < 1e-4);
    }

    #[test]
    fn zero_amplitude_gives_zero_map() {
        let m = gaussian_peak_map(Dims::new(5, 6), (2, 3), 0.0, 3.0).unwrap();
        assert!(m.iter().all(|&x| x == 0.0));
        let spec = PopulationSpec {
            dims: Dims::new(5, 6),
            peaks: vec![PeakSpec {
                center: (2, 3),
                amplitude: 0.0,
                fwhm: 3.0,
            }],
            var_scale: 2.0,
        };
        let g = generate_population(&spec).unwrap();
        assert!(g.mean.iter().chain(g.var.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn default_population_peaks_at_centres() {
        let spec = PopulationSpec::default();
        let g = generate_population(&spec).unwrap();
        assert_eq!(g.mean.shape(), (3, 2530));
        for (l, p) in spec.peaks.iter().enumerate() {
            let row = g.mean.row(l);
            let argmax = row.iter().enumerate().fold(0, |b, (i, &x)| if x > row[b] { i } else { b });
            assert_eq!(argmax, p.center.0 * 55 + p.center.1);
            assert_eq!(row[argmax], p.amplitude);
        }
        assert_eq!((spec.peaks[0].center), (11, 14));
    }

    #[test]
    fn variance_is_scaled_mean() {
        let mut spec = PopulationSpec::default();
        spec.var_scale = 0.37;
        let g = generate_population(&spec).unwrap();
        for (m, v) in g.mean.iter().zip(g.var.iter()) {
            assert_eq!(*v, 0.37 * m);
        }
    }

    #[test]
    fn zero_variance_gives_no_effects() {
        let mut spec = PopulationSpec::default();
        spec.var_scale = 0.0;
        let g = generate_population(&spec).unwrap();
        let s = simulate_subject(&g, 5.0, 3).unwrap();
        assert!(s.effects.iter().all(|&x| x == 0.0));
        assert_eq!(s.ics, g.mean);
    }

    #[test]
    fn tiny_kernel_leaves_draws_nearly_unsmoothed() {
        let spec = PopulationSpec {
            dims: Dims::new(10, 12),
            peaks: vec![PeakSpec {
                center: (4, 5),
                amplitude: 3.0,
                fwhm: 6.0,
            }],
            var_scale: 1.0,
        };
        let g = generate_population(&spec).unwrap();
        let smooth = simulate_subject(&g, 0.4, 17).unwrap();
        let direct = simulate_subject(&g, 0.0, 17).unwrap();
        assert!((smooth.effects - direct.effects).abs().max() < 1e-3);
    }

    #[test]
    fn peak_variance_matches_generating_variance() {
        let spec = PopulationSpec {
            dims: Dims::new(15, 15),
            peaks: vec![PeakSpec {
                center: (7, 6),
                amplitude: 4.0,
                fwhm: 8.0,
            }],
            var_scale: 0.5,
        };
        let g = generate_population(&spec).unwrap();
        let peak = 7 * 15 + 6;
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| simulate_subject(&g, 5.0, subject_seed(99, i)).unwrap().effects[(0, peak)])
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v / g.var[(0, peak)] - 1.0).abs() < 0.05, "ratio {}", v / g.var[(0, peak)]);
    }

    #[test]
    fn ics_minus_effects_recovers_mean() {
        let g = generate_population(&PopulationSpec::default()).unwrap();
        let s = simulate_subject(&g, 5.0, 1).unwrap();
        let d = (&s.ics - &s.effects - &g.mean).abs().max();
        assert!(d <= 1e-14 * g.mean.abs().max());
    }

    #[test]
    fn template_variance_at_peak_from_population() {
        let spec = PopulationSpec::default();
        let g = generate_population(&spec).unwrap();
        let subs = simulate_population(&g, 5.0, 1000, 2024).unwrap();
        let t = estimate_template(&subs.iter().map(|s| s.ics.clone()).collect::<Vec<_>>()).unwrap();
        for (l, p) in spec.peaks.iter().enumerate() {
            let peak = p.center.0 * 55 + p.center.1;
            let ratio = t.variance()[(l, peak)] / g.var[(l, peak)];
            assert!((ratio - 1.0).abs() < 0.1, "IC {l}: {ratio}");
        }
    }

    #[test]
    fn noiseless_single_constant_ic_reproduces_timecourse() {
        let pool = DMatrix::from_fn(50, 1, |t, _| (t as f64 * 0.3).sin() + 0.2);
        let ics = DMatrix::from_element(1, 7, 1.0);
        let d = simulate_timeseries(&ics, &pool, 0.0, 5).unwrap();
        for v in 0..7 {
            assert_eq!(d.y.column(v), d.mixing.column(0));
        }
    }

    #[test]
    fn mixing_columns_are_standardized() {
        let pool = synthetic_pool_for_tests();
        let ics = DMatrix::from_element(3, 4, 1.0);
        let d = simulate_timeseries(&ics, &pool, 1.0, 8).unwrap();
        for l in 0..3 {
            let c = d.mixing.column(l);
            let m = c.mean();
            let sd = (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64).sqrt();
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
        let mut cols = d.pool_columns.clone();
        cols.sort();
        cols.dedup();
        assert_eq!(cols.len(), 3);
    }

    #[test]
    fn noise_sd_is_recovered() {
        let pool = synthetic_pool_for_tests();
        let ics = DMatrix::zeros(2, 200);
        let d = simulate_timeseries(&ics, &pool, 11.2, 4).unwrap();
        let n = d.y.len() as f64;
        let sd = (d.y.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        assert!((sd / 11.2 - 1.0).abs() < 0.01);
    }

    #[test]
    fn pool_must_cover_ics() {
        let pool = DMatrix::from_fn(10, 2, |t, c| (t * (c + 1)) as f64);
        let ics = DMatrix::zeros(3, 4);
        assert!(matches!(
            simulate_timeseries(&ics, &pool, 1.0, 0),
            Err(Error::PoolTooSmall { available: 2, requested: 3 })
        ));
    }

    fn synthetic_pool_for_tests() -> DMatrix<f64> {
        crate::template::synthetic_timecourse_pool(800, 16, 0)
    }
}
