//! File-based pipeline stages. Each stage reads the outputs of earlier
//! stages from disk and writes its own into a directory.
//!
//! IC files are numbered from 1 (`ic_1.csv`, ...).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{
    fit_stica, fit_tica, FitOptions, FitResult, Method, Posterior, PosteriorPrecision, SmoothnessMode, SpatialPrior,
};
use crate::error::{Error, Result};
use crate::inference::{
    bonferroni_mask, excursion_set, fc_matrix, Direction, ExcursionResult, PosteriorField, DEFAULT_EXCURSION_SAMPLES,
};
use crate::io::{read_map_csv, read_matrix_csv, write_map_csv, write_matrix_csv, write_matrix_csv_with_header};
use crate::mesh::{grid_mesh, BoundarySpec, TriMesh};
use crate::preprocess::{
    center_scale, dimension_reduce, dual_regression, remove_nuisance, NuisanceOptions, ReducedData,
};
use crate::sparsela::{cholesky, SparseSym};
use crate::template::{
    estimate_template, generate_population, simulate_subject, simulate_timeseries, subject_seed,
    synthetic_timecourse_pool, Dims, GenerativeMaps, PopulationSpec, Template, DEFAULT_NOISE_SD, DEFAULT_SMOOTH_FWHM,
    DEFAULT_T,
};

pub fn subject_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("subject_{}", i + 1))
}

fn ic_file(dir: &Path, prefix: &str, l: usize) -> PathBuf {
    dir.join(format!("{prefix}_{}.csv", l + 1))
}

/// Writes the rows of `maps` (`L x V`) as `<prefix>_<l>.csv`.
pub fn write_ic_maps(dir: &Path, prefix: &str, maps: &DMatrix<f64>) -> Result<()> {
    for l in 0..maps.nrows() {
        let row: Vec<f64> = maps.row(l).iter().copied().collect();
        write_map_csv(&ic_file(dir, prefix, l), &row)?;
    }
    Ok(())
}

/// Reads `<prefix>_1.csv`, `<prefix>_2.csv`, ... into an `L x V` matrix.
pub fn read_ic_maps(dir: &Path, prefix: &str) -> Result<DMatrix<f64>> {
    let mut maps = Vec::new();
    while ic_file(dir, prefix, maps.len()).exists() {
        maps.push(read_map_csv(&ic_file(dir, prefix, maps.len()))?);
    }
    if maps.is_empty() {
        return Err(Error::parse(dir, format!("no {prefix}_1.csv")));
    }
    let v = maps[0].len();
    if maps.iter().any(|m| m.len() != v) {
        return Err(Error::parse(dir, format!("{prefix} maps have unequal lengths")));
    }
    Ok(DMatrix::from_fn(maps.len(), v, |l, i| maps[l][i]))
}

pub fn write_mask_csv(path: &Path, mask: &[bool]) -> Result<()> {
    let m: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["value"])?;
    for x in m {
        w.write_record([format!("{}", x as u8)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mask_csv(path: &Path) -> Result<Vec<bool>> {
    Ok(read_map_csv(path)?.into_iter().map(|x| x != 0.0).collect())
}

fn write_scalar(path: &Path, x: f64) -> Result<()> {
    fs::write(path, format!("{x:e}\n"))?;
    Ok(())
}

fn read_scalar(path: &Path) -> Result<f64> {
    let s = fs::read_to_string(path)?;
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("cannot parse {:?}", s.trim())))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub population: PopulationSpec,
    pub subjects: usize,
    pub t: usize,
    pub noise_sd: f64,
    pub smooth_fwhm: f64,
    /// Synthetic pool size when no pool file is given.
    pub pool_size: usize,
    /// `T x P` CSV of timecourses.
    pub pool: Option<PathBuf>,
    /// Boundary rings of the grid mesh written alongside the data.
    pub boundary_rings: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            population: PopulationSpec::default(),
            subjects: 5,
            t: DEFAULT_T,
            noise_sd: DEFAULT_NOISE_SD,
            smooth_fwhm: DEFAULT_SMOOTH_FWHM,
            pool_size: 16,
            pool: None,
            boundary_rings: 2,
        }
    }
}

/// Generating maps, timecourse pool, grid mesh and per-subject truth and
/// data (`subject_<i>/Y.csv`, `ic_<l>.csv`, `effect_<l>.csv`,
/// `mixing.csv`).
pub fn stage_simulate(cfg: &SimulateConfig, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let gen = generate_population(&cfg.population)?;
    let dims = gen.dims;
    write_text(&out.join("dims.txt"), &format!("{}x{}\n", dims.rows, dims.cols))?;
    write_ic_maps(out, "gen_mean", &gen.mean)?;
    write_ic_maps(out, "gen_var", &gen.var)?;
    write_scalar(&out.join("smooth_fwhm.txt"), cfg.smooth_fwhm)?;
    let pool = match &cfg.pool {
        Some(p) => read_matrix_csv(p)?,
        None => synthetic_timecourse_pool(cfg.t, cfg.pool_size, subject_seed(seed, u64::MAX)),
    };
    write_matrix_csv(&out.join("pool.csv"), &pool)?;
    let mesh = grid_mesh(dims.rows, dims.cols, &BoundarySpec::doubling(cfg.boundary_rings))?;
    mesh.write(BufWriter::new(File::create(out.join("mesh.txt"))?))?;
    for i in 0..cfg.subjects {
        let dir = subject_dir(out, i);
        fs::create_dir_all(&dir)?;
        let truth = simulate_subject(&gen, cfg.smooth_fwhm, subject_seed(seed, 2 * i as u64))?;
        let ts = simulate_timeseries(&truth.ics, &pool, cfg.noise_sd, subject_seed(seed, 2 * i as u64 + 1))?;
        write_matrix_csv(&dir.join("Y.csv"), &ts.y)?;
        write_matrix_csv(&dir.join("mixing.csv"), &ts.mixing)?;
        write_ic_maps(&dir, "ic", &truth.ics)?;
        write_ic_maps(&dir, "effect", &truth.effects)?;
    }
    Ok(())
}

pub fn read_dims(sim_dir: &Path) -> Result<Dims> {
    Dims::parse(fs::read_to_string(sim_dir.join("dims.txt"))?.trim())
}

pub fn read_generative(sim_dir: &Path) -> Result<GenerativeMaps> {
    Ok(GenerativeMaps {
        dims: read_dims(sim_dir)?,
        mean: read_ic_maps(sim_dir, "gen_mean")?,
        var: read_ic_maps(sim_dir, "gen_var")?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Simulated subjects drawn from the generating maps.
    pub subjects: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig { subjects: 1000 }
    }
}

/// Template from `n` fresh subjects of the generator stored in `sim_dir`.
pub fn stage_template_simulated(sim_dir: &Path, cfg: &TemplateConfig, seed: u64, out: &Path) -> Result<Template> {
    let gen = read_generative(sim_dir)?;
    let fwhm = read_scalar(&sim_dir.join("smooth_fwhm.txt"))?;
    let ics = (0..cfg.subjects)
        .map(|i| simulate_subject(&gen, fwhm, subject_seed(seed, i as u64)).map(|s| s.ics))
        .collect::<Result<Vec<_>>>()?;
    let t = estimate_template(&ics)?;
    t.write_dir(out)?;
    Ok(t)
}

/// Template from subject directories holding `ic_<l>.csv`.
pub fn stage_template_from_dirs(dirs: &[PathBuf], out: &Path) -> Result<Template> {
    let ics = dirs.iter().map(|d| read_ic_maps(d, "ic")).collect::<Result<Vec<_>>>()?;
    let t = estimate_template(&ics)?;
    t.write_dir(out)?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Defaults to the template IC count.
    pub l: Option<usize>,
    pub nuisance_count: Option<usize>,
    /// Rounds of nuisance removal; 0 skips it.
    pub nuisance_iters: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            l: None,
            nuisance_count: None,
            nuisance_iters: 0,
        }
    }
}

/// Centring, nuisance removal, dual regression and dimension reduction.
/// Writes `y.csv`, `H.csv`, `C.csv`, `nu0sq.txt`, `dr_mixing.csv` and
/// `dr_ic_<l>.csv`.
///
/// The data are centred across locations, so the template is centred too;
/// the dual-regression maps get the template's spatial means back.
pub fn stage_preprocess(
    data: &Path,
    template_dir: &Path,
    cfg: &PreprocessConfig,
    seed: u64,
    out: &Path,
) -> Result<ReducedData> {
    fs::create_dir_all(out)?;
    let y = read_matrix_csv(data)?;
    let mut template = Template::read_dir(template_dir)?;
    if let Some(l) = cfg.l {
        if l > template.n_ics() || l == 0 {
            return Err(Error::InvalidArgument(format!("L = {l} but the template has {} ICs", template.n_ics())));
        }
        template = template.select(&(0..l).collect::<Vec<_>>())?;
    }
    let (template, offsets) = template.centered();
    let (yc, _) = center_scale(&y)?;
    let yc = if cfg.nuisance_iters > 0 {
        let opts = NuisanceOptions {
            iterations: cfg.nuisance_iters,
            forced_count: cfg.nuisance_count,
            seed,
            ..Default::default()
        };
        let r = remove_nuisance(&yc, &template, &opts)?;
        write_text(
            &out.join("nuisance_counts.txt"),
            &r.counts.iter().map(|c| format!("{c}\n")).collect::<String>(),
        )?;
        r.y_clean
    } else {
        yc
    };
    let dr = dual_regression(&yc, template.mean())?;
    write_matrix_csv(&out.join("dr_mixing.csv"), &dr.mixing)?;
    write_ic_maps(out, "dr_ic", &shifted(&dr.maps, &offsets))?;
    let red = dimension_reduce(&yc, template.n_ics())?;
    write_matrix_csv(&out.join("y.csv"), &red.y)?;
    write_matrix_csv(&out.join("H.csv"), &red.h)?;
    write_matrix_csv(&out.join("C.csv"), &red.c)?;
    write_scalar(&out.join("nu0sq.txt"), red.nu0_sq)?;
    Ok(red)
}

/// Inverse of the files written by [`stage_preprocess`]; `Delta` and `U`
/// are recovered from `C = Delta^2` and `H = Delta U'`.
pub fn read_reduced(dir: &Path) -> Result<ReducedData> {
    let y = read_matrix_csv(&dir.join("y.csv"))?;
    let h = read_matrix_csv(&dir.join("H.csv"))?;
    let c = read_matrix_csv(&dir.join("C.csv"))?;
    let nu0_sq = read_scalar(&dir.join("nu0sq.txt"))?;
    let l = y.nrows();
    if h.nrows() != l || c.shape() != (l, l) {
        return Err(Error::parse(dir, "inconsistent reduced data shapes"));
    }
    let delta: Vec<f64> = (0..l).map(|i| c[(i, i)].sqrt()).collect();
    let mut u = h.transpose();
    for (i, d) in delta.iter().enumerate() {
        u.column_mut(i).unscale_mut(*d);
    }
    Ok(ReducedData {
        y,
        h,
        c,
        nu0_sq,
        delta,
        u,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Stica,
    Tica,
}

impl std::str::FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stica" => Ok(FitMethod::Stica),
            "tica" => Ok(FitMethod::Tica),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::Stica => "stica",
            FitMethod::Tica => "tica",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Common,
    PerIc,
}

impl From<ModeName> for SmoothnessMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Common => SmoothnessMode::Common,
            ModeName::PerIc => SmoothnessMode::PerIc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub methods: Vec<FitMethod>,
    pub mode: ModeName,
    pub tol: f64,
    pub max_iter: usize,
    pub squarem: bool,
    pub initial_kappa: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        FitConfig {
            methods: vec![FitMethod::Stica, FitMethod::Tica],
            mode: ModeName::Common,
            tol: d.tol,
            max_iter: d.max_iter,
            squarem: d.squarem,
            initial_kappa: None,
        }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            mode: self.mode.into(),
            tol: self.tol,
            max_iter: self.max_iter,
            squarem: self.squarem,
            initial_kappa: self.initial_kappa,
        }
    }
}

/// Summary written to `fit.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub method: FitMethod,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub kappas: Vec<f64>,
    pub kappa_at_boundary: bool,
    pub wall_seconds: f64,
}

fn shifted(maps: &DMatrix<f64>, offsets: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(maps.nrows(), maps.ncols(), |l, v| maps[(l, v)] + offsets[l])
}

/// Fits one subject. `mesh` is required for the spatial model.
///
/// The fit uses the spatially centred template, matching the centred data;
/// the returned IC maps have the template's spatial means added back.
pub fn stage_fit(
    method: FitMethod,
    pre_dir: &Path,
    template_dir: &Path,
    mesh: Option<&Path>,
    opts: &FitOptions,
    out: &Path,
) -> Result<FitResult> {
    let red = read_reduced(pre_dir)?;
    let mut template = Template::read_dir(template_dir)?;
    if template.n_ics() > red.n_ics() {
        template = template.select(&(0..red.n_ics()).collect::<Vec<_>>())?;
    }
    let (template, offsets) = template.centered();
    let mut fit = match method {
        FitMethod::Stica => {
            let path = mesh.ok_or_else(|| Error::InvalidArgument("the spatial model needs a mesh".into()))?;
            let mesh = TriMesh::read_path(path)?;
            let prior = SpatialPrior::from_mesh(&mesh, red.n_locations())?;
            fit_stica(&red, &template, &prior, opts)?
        }
        FitMethod::Tica => fit_tica(&red, &template, opts)?,
    };
    fit.subject_ics = shifted(&fit.subject_ics, &offsets);
    fit.posterior.mean = shifted(&fit.posterior.mean, &offsets);
    write_fit(&fit, &red, out)?;
    Ok(fit)
}

/// Writes maps, parameters, trace and posterior precision of a fit.
pub fn write_fit(fit: &FitResult, red: &ReducedData, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_ic_maps(out, "ic", &fit.subject_ics)?;
    write_ic_maps(out, "effect", &fit.subject_effects)?;
    write_ic_maps(out, "sd", &fit.marginal_sd)?;
    write_ic_maps(out, "prior_sd", &fit.posterior.d)?;
    write_matrix_csv(&out.join("mixing.csv"), &fit.params.mixing)?;
    write_matrix_csv(&out.join("timecourses.csv"), &crate::inference::fit_timecourses(fit, red)?)?;
    write_text(
        &out.join("kappa.txt"),
        &fit.params.kappas.iter().map(|k| format!("{k:e}\n")).collect::<String>(),
    )?;
    let trace = DMatrix::from_fn(fit.trace.len(), 4, |i, j| {
        let r = &fit.trace[i];
        match j {
            0 => (i + 1) as f64,
            1 => r.change,
            2 => r.log_likelihood,
            _ => r.extrapolated as u8 as f64,
        }
    });
    let header = ["iteration", "change", "log_likelihood", "extrapolated"].map(String::from);
    write_matrix_csv_with_header(&out.join("trace.csv"), &trace, &header)?;
    let summary = FitSummary {
        method: match fit.method {
            Method::Stica => FitMethod::Stica,
            Method::Tica => FitMethod::Tica,
        },
        iterations: fit.iterations,
        converged: fit.converged,
        log_likelihood: fit.log_likelihood,
        kappas: fit.params.kappas.clone(),
        kappa_at_boundary: fit.kappa_at_boundary,
        wall_seconds: fit.wall_seconds,
    };
    write_text(&out.join("fit.toml"), &toml::to_string(&summary).map_err(|e| Error::InvalidArgument(e.to_string()))?)?;
    match &fit.posterior.precision {
        PosteriorPrecision::Joint { omega, .. } => {
            let mut w = BufWriter::new(File::create(out.join("omega.coo"))?);
            omega.write_coo(&mut w)?;
            w.flush()?;
        }
        PosteriorPrecision::Local(blocks) => {
            let l = fit.subject_ics.nrows();
            let m = DMatrix::from_fn(blocks.len(), l * l, |v, k| blocks[v][(k / l, k % l)]);
            write_matrix_csv(&out.join("local_cov.csv"), &m)?;
        }
    }
    Ok(())
}

/// Posterior and marginal SDs reconstructed from a fit directory.
pub struct LoadedFit {
    pub posterior: Posterior,
    pub marginal_sd: DMatrix<f64>,
    pub effects: DMatrix<f64>,
}

pub fn read_fit(dir: &Path) -> Result<LoadedFit> {
    let mean = read_ic_maps(dir, "ic")?;
    let d = read_ic_maps(dir, "prior_sd")?;
    let marginal_sd = read_ic_maps(dir, "sd")?;
    let effects = read_ic_maps(dir, "effect")?;
    let (l, v) = mean.shape();
    let coo = dir.join("omega.coo");
    let precision = if coo.exists() {
        let omega = SparseSym::read_coo(BufReader::new(File::open(&coo)?), &coo)?;
        let factor = cholesky(&omega)?;
        PosteriorPrecision::Joint { omega, factor }
    } else {
        let m = read_matrix_csv(&dir.join("local_cov.csv"))?;
        if m.shape() != (v, l * l) {
            return Err(Error::parse(dir, "local_cov.csv has the wrong shape"));
        }
        PosteriorPrecision::Local((0..v).map(|i| DMatrix::from_fn(l, l, |a, b| m[(i, a * l + b)])).collect())
    };
    Ok(LoadedFit {
        posterior: Posterior { mean, d, precision },
        marginal_sd,
        effects,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcursionConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub samples: usize,
    /// Also compute positive and negative deviation sets of the effects.
    pub deviations: bool,
}

impl Default for ExcursionConfig {
    fn default() -> Self {
        ExcursionConfig {
            gamma: 1.0,
            alpha: 0.1,
            samples: DEFAULT_EXCURSION_SAMPLES,
            deviations: false,
        }
    }
}

/// How the engagement mask of one IC is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskRule {
    /// Joint-posterior excursion set.
    Joint,
    /// Per-location test with Bonferroni correction.
    Bonferroni,
}

/// Engagement mask of IC `ic` (0-based). `scale` converts the fitted map
/// to the units of `gamma` (`s -> scale * s`).
#[allow(clippy::too_many_arguments)]
pub fn engagement_mask(
    fit: &LoadedFit,
    ic: usize,
    rule: MaskRule,
    gamma: f64,
    alpha: f64,
    direction: Direction,
    scale: f64,
    samples: usize,
    seed: u64,
) -> Result<ExcursionResult> {
    if ic >= fit.posterior.mean.nrows() {
        return Err(Error::InvalidArgument(format!("IC {} out of range", ic + 1)));
    }
    if !(scale != 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be finite and non-zero, got {scale}")));
    }
    let g = gamma / scale;
    let dir = if scale < 0.0 {
        match direction {
            Direction::Positive => Direction::Negative,
            Direction::Negative => Direction::Positive,
        }
    } else {
        direction
    };
    let mean: Vec<f64> = fit.posterior.mean.row(ic).iter().copied().collect();
    match rule {
        MaskRule::Joint => {
            let field = PosteriorField::new(&fit.posterior, &fit.marginal_sd, ic)?;
            let mut r = excursion_set(&mean, &field, g, alpha, dir, samples, seed)?;
            r.gamma = gamma;
            r.direction = direction;
            Ok(r)
        }
        MaskRule::Bonferroni => {
            let sd: Vec<f64> = fit.marginal_sd.row(ic).iter().copied().collect();
            Ok(ExcursionResult {
                mask: bonferroni_mask(&mean, &sd, g, alpha, dir)?,
                gamma,
                alpha,
                direction,
                attained_joint_prob: f64::NAN,
                n_samples: 0,
            })
        }
    }
}

/// Set where the subject effect of IC `ic` deviates from zero in
/// `direction`.
pub fn deviation_mask(
    fit: &LoadedFit,
    ic: usize,
    rule: MaskRule,
    alpha: f64,
    direction: Direction,
    samples: usize,
    seed: u64,
) -> Result<Vec<bool>> {
    if ic >= fit.effects.nrows() {
        return Err(Error::InvalidArgument(format!("IC {} out of range", ic + 1)));
    }
    let mean: Vec<f64> = fit.effects.row(ic).iter().copied().collect();
    match rule {
        MaskRule::Joint => {
            let field = PosteriorField::new(&fit.posterior, &fit.marginal_sd, ic)?;
            Ok(excursion_set(&mean, &field, 0.0, alpha, direction, samples, seed)?.mask)
        }
        MaskRule::Bonferroni => {
            let sd: Vec<f64> = fit.marginal_sd.row(ic).iter().copied().collect();
            bonferroni_mask(&mean, &sd, 0.0, alpha, direction)
        }
    }
}

/// Pearson FC of the `T x L` timecourses in `path`.
pub fn fc_from_file(path: &Path) -> Result<DMatrix<f64>> {
    fc_matrix(&read_matrix_csv(path)?)
}
