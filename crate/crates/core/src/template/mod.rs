//! Population templates and the generative simulator.
//!
//! Map sets are `L x V` matrices (one IC per row); a pixel map on a
//! `rows x cols` grid is stored row-major.

mod pool;
mod simulate;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_map_csv, write_map_csv};

pub use pool::synthetic_timecourse_pool;
pub use simulate::{
    fwhm_to_sigma, gaussian_peak_map, gaussian_smooth, generate_population, simulate_population,
    simulate_subject, simulate_timeseries, subject_seed, GenerativeMaps, SubjectTruth,
    TimeseriesDraw,
};

/// Pixel grid shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
}

impl Dims {
    pub fn new(rows: usize, cols: usize) -> Self {
        Dims { rows, cols }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses `ROWSxCOLS`.
    pub fn parse(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidArgument(format!("dims {s:?} not of the form RxC")))?;
        let bad = || Error::InvalidArgument(format!("dims {s:?} not of the form RxC"));
        Ok(Dims {
            rows: r.trim().parse().map_err(|_| bad())?,
            cols: c.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// One generating IC: a Gaussian bump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakSpec {
    /// 0-based `(row, col)`.
    pub center: (usize, usize),
    pub amplitude: f64,
    pub fwhm: f64,
}

/// Generating design for a simulated population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub dims: Dims,
    pub peaks: Vec<PeakSpec>,
    /// `gen_var = var_scale * gen_mean`.
    pub var_scale: f64,
}

/// Default peak amplitude. Together with unit-SD timecourses and the default
/// noise SD it gives a mean signal variance of half the noise variance.
pub const DEFAULT_AMPLITUDE: f64 = 9.0;
/// Default proportionality between generating variance and mean: a peak
/// effect SD of a third of the peak amplitude.
pub const DEFAULT_VAR_SCALE: f64 = 1.0;
pub const DEFAULT_NOISE_SD: f64 = 11.2;
pub const DEFAULT_SMOOTH_FWHM: f64 = 5.0;
pub const DEFAULT_T: usize = 800;

impl Default for PopulationSpec {
    /// 46 x 55 grid with three bumps.
    fn default() -> Self {
        let peak = |r: usize, c: usize, fwhm: f64| PeakSpec {
            center: (r - 1, c - 1),
            amplitude: DEFAULT_AMPLITUDE,
            fwhm,
        };
        PopulationSpec {
            dims: Dims::new(46, 55),
            peaks: vec![peak(12, 15, 30.0), peak(35, 40, 40.0), peak(15, 40, 45.0)],
            var_scale: DEFAULT_VAR_SCALE,
        }
    }
}

/// Population mean and between-subject variance per IC.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    mean: DMatrix<f64>,
    variance: DMatrix<f64>,
}

impl Template {
    pub fn new(mean: DMatrix<f64>, variance: DMatrix<f64>) -> Result<Self> {
        if mean.shape() != variance.shape() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variance.len(),
                context: "template mean/variance shape",
            });
        }
        if variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("template variance must be non-negative".into()));
        }
        Ok(Template { mean, variance })
    }

    #[inline]
    pub fn n_ics(&self) -> usize {
        self.mean.nrows()
    }

    #[inline]
    pub fn n_locations(&self) -> usize {
        self.mean.ncols()
    }

    /// `L x V`.
    #[inline]
    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    /// `L x V`.
    #[inline]
    pub fn variance(&self) -> &DMatrix<f64> {
        &self.variance
    }

    /// Restricts to the given ICs, in order.
    pub fn select(&self, ics: &[usize]) -> Result<Template> {
        if let Some(&bad) = ics.iter().find(|&&l| l >= self.n_ics()) {
            return Err(Error::InvalidArgument(format!("IC {bad} out of range")));
        }
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(ics.len(), m.ncols(), |i, v| m[(ics[i], v)]);
        Ok(Template {
            mean: pick(&self.mean),
            variance: pick(&self.variance),
        })
    }

    /// The template with each mean map centred across locations, and the
    /// removed spatial means.
    pub fn centered(&self) -> (Template, Vec<f64>) {
        let offsets: Vec<f64> = self.mean.row_iter().map(|r| r.mean()).collect();
        let mean = DMatrix::from_fn(self.n_ics(), self.n_locations(), |l, v| self.mean[(l, v)] - offsets[l]);
        (
            Template {
                mean,
                variance: self.variance.clone(),
            },
            offsets,
        )
    }

    /// Writes `mean_<l>.csv` and `var_<l>.csv` (1-based `l`) into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for l in 0..self.n_ics() {
            let mean: Vec<f64> = self.mean.row(l).iter().copied().collect();
            let var: Vec<f64> = self.variance.row(l).iter().copied().collect();
            write_map_csv(&dir.join(format!("mean_{}.csv", l + 1)), &mean)?;
            write_map_csv(&dir.join(format!("var_{}.csv", l + 1)), &var)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for l in 1.. {
            let mp = dir.join(format!("mean_{l}.csv"));
            if !mp.exists() {
                break;
            }
            means.push(read_map_csv(&mp)?);
            vars.push(read_map_csv(&dir.join(format!("var_{l}.csv")))?);
        }
        if means.is_empty() {
            return Err(Error::parse(dir, "no mean_1.csv in template directory"));
        }
        let v = means[0].len();
        if means.iter().chain(&vars).any(|m| m.len() != v) {
            return Err(Error::parse(dir, "template maps have unequal lengths"));
        }
        let stack = |maps: &[Vec<f64>]| DMatrix::from_fn(maps.len(), v, |l, i| maps[l][i]);
        Template::new(stack(&means), stack(&vars))
    }
}

/// Elementwise mean and unbiased variance over subjects' IC maps.
pub fn estimate_template(subject_ics: &[DMatrix<f64>]) -> Result<Template> {
    let n = subject_ics.len();
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    let shape = subject_ics[0].shape();
    if let Some(bad) = subject_ics.iter().find(|s| s.shape() != shape) {
        return Err(Error::DimensionMismatch {
            expected: shape.0 * shape.1,
            got: bad.len(),
            context: "subject IC map shapes",
        });
    }
    // Two-pass for accuracy.
    let mut mean = DMatrix::zeros(shape.0, shape.1);
    for s in subject_ics {
        mean += s;
    }
    mean /= n as f64;
    let mut var = DMatrix::zeros(shape.0, shape.1);
    for s in subject_ics {
        let d = s - &mean;
        var += d.component_mul(&d);
    }
    var /= (n - 1) as f64;
    Template::new(mean, var)
}
