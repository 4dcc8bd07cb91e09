//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! The full-scale simulation study is cached in
//! `target/acceptance/study` and reused when its manifest matches the
//! configuration below. Set `STICA_ACCEPTANCE_SKIP_STUDY=1` to skip it.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use stica::em::{
    e_step, kappa_objective, tica_e_step, update_kappa, update_mixing, EmData, ModelParams, OmegaLayout,
    SmoothnessMode, SpatialPrior,
};
use stica::eval::{run_pipeline, Manifest, PipelineConfig};
use stica::inference::{bonferroni_mask, excursion_set, CovarianceField, Direction};
use stica::mesh::{assemble_fem, data_precision, grid_mesh, spde_precision, BoundarySpec, FemMatrices, TriMesh};
use stica::sparsela::{cholesky, partial_inverse, SparseSym};

// Tolerances.
const EM_REL_TOL: f64 = 1e-8;
const MONOTONE_SLACK: f64 = 1e-8;
const TAKAHASHI_TOL: f64 = 1e-10;
const DATA_PRECISION_TOL: f64 = 1e-9;
const EXCURSION_SAMPLES: usize = 100_000;
const EXCURSION_MIN_AGREE: usize = 48;
const ORDERING_MIN_PAIRS: usize = 12;
const MAX_FPR: f64 = 0.10;
const MIN_POWER: f64 = 0.6;
const NULL_SEEDS: usize = 200;
const NULL_ALPHA: f64 = 0.1;

fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter().zip(b).fold(0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

// ---------------------------------------------------------------------------
// Dense model oracles

fn dense_fem(fem: &FemMatrices<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from_diagonal(&DVector::from_column_slice(fem.f_diag())), fem.g().to_dense())
}

/// `Q = (kappa^2 F + 2 G + kappa^-2 G F^-1 G) / (4 pi)`.
fn dense_q(fem: &FemMatrices<f64>, kappa: f64) -> DMatrix<f64> {
    let (f, g) = dense_fem(fem);
    let finv = f.clone().try_inverse().unwrap();
    (f * kappa.powi(2) + &g * 2.0 + &g * finv * &g / kappa.powi(2)) / (4.0 * PI)
}

/// `(A Q^{-1} A')^{-1}` with `A` selecting `idx`.
fn dense_data_precision(q: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let cov = q.clone().try_inverse().unwrap();
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])])
        .try_inverse()
        .unwrap()
}

struct Instance {
    mesh: TriMesh,
    fem: FemMatrices<f64>,
    prior: SpatialPrior,
    params: ModelParams,
    data: EmData,
}

fn random_instance(rng: &mut ChaCha8Rng, l: usize, rows: usize, cols: usize, n_kappa: usize) -> Instance {
    let mesh = grid_mesh(rows, cols, &BoundarySpec::doubling(1)).unwrap();
    let fem = assemble_fem::<f64>(&mesh).unwrap();
    let prior = SpatialPrior::from_fem(&fem, mesh.data_indices()).unwrap();
    let v = rows * cols;
    let m = DMatrix::from_fn(l, l, |i, j| if i == j { 1.0 } else { 0.0 } + 0.5 * (rng.random::<f64>() - 0.5));
    let g = DMatrix::from_fn(l, l, |_, _| rng.random::<f64>() - 0.5);
    let c = &g * g.transpose() + DMatrix::identity(l, l);
    let kappas = (0..n_kappa).map(|_| 0.2 + 1.5 * rng.random::<f64>()).collect();
    let params = ModelParams::new(m, kappas, 0.3 + rng.random::<f64>(), c).unwrap();
    let s0 = DMatrix::from_fn(l, v, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let d = DMatrix::from_fn(l, v, |_, _| 0.2 + rng.random::<f64>());
    let y = DMatrix::from_fn(l, v, |_, _| 3.0 * rng.random::<f64>() - 1.5);
    let data = EmData::with_prior_sd(y, s0, d).unwrap();
    Instance {
        mesh,
        fem,
        prior,
        params,
        data,
    }
}

fn kappa_of(params: &ModelParams, l: usize) -> f64 {
    if params.kappas.len() == 1 {
        params.kappas[0]
    } else {
        params.kappas[l]
    }
}

struct DensePosterior {
    /// IC-major index `l * V + v`.
    omega_inv: DMatrix<f64>,
    mu: DMatrix<f64>,
    r_inv: Vec<DMatrix<f64>>,
}

fn dense_posterior(inst: &Instance) -> DensePosterior {
    let p = &inst.params;
    let (l, v) = (inst.data.n_ics(), inst.data.n_locations());
    let idx = inst.mesh.data_indices();
    let r_inv: Vec<DMatrix<f64>> =
        (0..l).map(|ic| dense_data_precision(&dense_q(&inst.fem, kappa_of(p, ic)), idx)).collect();
    let noise_inv = (&p.c * p.nu0_sq).try_inverse().unwrap();
    let a = p.mixing.transpose() * &noise_inv * &p.mixing;
    let d = &inst.data.d;
    let n = l * v;
    let mut omega = DMatrix::zeros(n, n);
    let mut m = DVector::zeros(n);
    for ic in 0..l {
        omega.view_mut((ic * v, ic * v), (v, v)).copy_from(&r_inv[ic]);
        let u = DVector::from_fn(v, |i, _| inst.data.s0[(ic, i)] / d[(ic, i)]);
        let ru = &r_inv[ic] * u;
        for i in 0..v {
            m[ic * v + i] += ru[i];
        }
    }
    for loc in 0..v {
        let b = p.mixing.transpose() * &noise_inv * inst.data.y.column(loc);
        for i in 0..l {
            m[i * v + loc] += d[(i, loc)] * b[i];
            for j in 0..l {
                omega[(i * v + loc, j * v + loc)] += d[(i, loc)] * a[(i, j)] * d[(j, loc)];
            }
        }
    }
    let omega_inv = omega.try_inverse().unwrap();
    let x = &omega_inv * m;
    let mu = DMatrix::from_fn(l, v, |i, loc| d[(i, loc)] * x[i * v + loc]);
    DensePosterior { omega_inv, mu, r_inv }
}

/// `M = (sum_v y mu') (sum_v E[s s'])^{-1}`.
fn dense_mstep(inst: &Instance, post: &DensePosterior) -> DMatrix<f64> {
    let (l, v) = (inst.data.n_ics(), inst.data.n_locations());
    let d = &inst.data.d;
    let mut yt = DMatrix::zeros(inst.data.y.nrows(), l);
    let mut tt = DMatrix::zeros(l, l);
    for loc in 0..v {
        let mu = post.mu.column(loc);
        yt += inst.data.y.column(loc) * mu.transpose();
        tt += mu * mu.transpose();
        for i in 0..l {
            for j in 0..l {
                tt[(i, j)] += d[(i, loc)] * post.omega_inv[(i * v + loc, j * v + loc)] * d[(j, loc)];
            }
        }
    }
    yt * tt.try_inverse().unwrap()
}

/// Expected log prior (times two, without constants) of the scaled
/// deviations at `kappa`: `sum_l ln|R^{-1}| - tr(R^{-1} E[x_l x_l'])`.
fn dense_kappa_objective(inst: &Instance, post: &DensePosterior, kappa: f64) -> f64 {
    let (l, v) = (inst.data.n_ics(), inst.data.n_locations());
    let r_inv = dense_data_precision(&dense_q(&inst.fem, kappa), inst.mesh.data_indices());
    let logdet = r_inv.clone().cholesky().unwrap().l().diagonal().map(f64::ln).sum() * 2.0;
    let d = &inst.data.d;
    let mut f = 0.0;
    for ic in 0..l {
        let xhat = DVector::from_fn(v, |i, _| (post.mu[(ic, i)] - inst.data.s0[(ic, i)]) / d[(ic, i)]);
        let exx = post.omega_inv.view((ic * v, ic * v), (v, v)) + &xhat * xhat.transpose();
        f += logdet - (&r_inv * exx).trace();
    }
    f
}

/// `ln p(y)` with `y(v) = M s(v) + e(v)`, `s_l ~ N(s0_l, D_l R_l D_l)`.
fn dense_loglik(inst: &Instance) -> f64 {
    let p = &inst.params;
    let (l, v) = (inst.data.n_ics(), inst.data.n_locations());
    let q = inst.data.y.nrows();
    let idx = inst.mesh.data_indices();
    let d = &inst.data.d;
    let covs: Vec<DMatrix<f64>> = (0..l)
        .map(|ic| dense_data_precision(&dense_q(&inst.fem, kappa_of(p, ic)), idx).try_inverse().unwrap())
        .collect();
    // observation index: loc * q + row
    let n = q * v;
    let mut cov = DMatrix::zeros(n, n);
    for a in 0..v {
        for b in 0..v {
            for r1 in 0..q {
                for r2 in 0..q {
                    let mut x = 0.0;
                    for ic in 0..l {
                        x += p.mixing[(r1, ic)] * p.mixing[(r2, ic)] * d[(ic, a)] * covs[ic][(a, b)] * d[(ic, b)];
                    }
                    if a == b {
                        x += p.nu0_sq * p.c[(r1, r2)];
                    }
                    cov[(a * q + r1, b * q + r2)] = x;
                }
            }
        }
    }
    let mean = &p.mixing * &inst.data.s0;
    let e = DVector::from_fn(n, |i, _| inst.data.y[(i % q, i / q)] - mean[(i % q, i / q)]);
    let chol = cov.cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().map(f64::ln).sum();
    -0.5 * (n as f64 * (2.0 * PI).ln() + logdet + e.dot(&chol.solve(&e)))
}

fn criterion_dense_em() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0f64;
    for k in 0..25 {
        let l = 1 + k % 3;
        let (rows, cols) = loop {
            let r = rng.random_range(2..=5);
            let c = rng.random_range(3..=6);
            if (6..=30).contains(&(r * c)) {
                break (r, c);
            }
        };
        let inst = random_instance(&mut rng, l, rows, cols, if k % 2 == 0 { 1 } else { l });
        let v = rows * cols;
        let layout = OmegaLayout::new(Arc::clone(inst.prior.r_pattern()), l).unwrap();
        let mom = e_step(&inst.params, &inst.data, &inst.prior, &layout).unwrap();
        let dense = dense_posterior(&inst);

        let mut errs = vec![rel_err(mom.mu.as_slice(), dense.mu.as_slice())];
        let mut got = Vec::new();
        let mut want = Vec::new();
        for loc in 0..v {
            for i in 0..l {
                for j in 0..l {
                    got.push(mom.location_blocks[loc][(i, j)]);
                    want.push(dense.omega_inv[(i * v + loc, j * v + loc)]);
                }
            }
        }
        for ic in 0..l {
            for ((i, j), x) in inst.prior.r_pattern().iter().zip(&mom.prior_blocks[ic]) {
                got.push(*x);
                want.push(dense.omega_inv[(ic * v + i, ic * v + j)]);
            }
        }
        errs.push(rel_err(&got, &want));
        let m = update_mixing(&mom, &inst.data).unwrap();
        errs.push(rel_err(m.as_slice(), dense_mstep(&inst, &dense).as_slice()));
        let ics: Vec<usize> = (0..l).collect();
        for kappa in [0.3, 1.0, 2.5] {
            let a = kappa_objective(&inst.prior, &mom, kappa, &ics).unwrap();
            let b = dense_kappa_objective(&inst, &dense, kappa);
            errs.push((a - b).abs() / b.abs().max(1.0));
        }
        errs.push((mom.log_likelihood - dense_loglik(&inst)).abs() / mom.log_likelihood.abs().max(1.0));
        worst = errs.into_iter().fold(worst, f64::max);
        let _ = &dense.r_inv;
    }
    (worst <= EM_REL_TOL, format!("25 instances, worst relative error {worst:.2e} (tol {EM_REL_TOL:.0e})"))
}

fn criterion_monotone() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_drop = 0f64;
    for k in 0..10 {
        let l = 1 + k % 3;
        let mut inst = random_instance(&mut rng, l, 3, 3 + k % 2, 1);
        let layout = OmegaLayout::new(Arc::clone(inst.prior.r_pattern()), l).unwrap();
        let mut prev = dense_loglik(&inst);
        for _ in 0..20 {
            let mom = e_step(&inst.params, &inst.data, &inst.prior, &layout).unwrap();
            let mixing = update_mixing(&mom, &inst.data).unwrap();
            let kappas = update_kappa(&inst.prior, &mom, &inst.params.kappas, SmoothnessMode::Common).unwrap().kappas;
            inst.params = ModelParams::new(mixing, kappas, inst.params.nu0_sq, inst.params.c.clone()).unwrap();
            let ll = dense_loglik(&inst);
            worst_drop = worst_drop.max((prev - ll) / prev.abs().max(1.0));
            prev = ll;
        }
    }
    (
        worst_drop <= MONOTONE_SLACK,
        format!("10 instances x 20 iterations, largest relative decrease {worst_drop:.2e} (slack {MONOTONE_SLACK:.0e})"),
    )
}

fn criterion_takahashi() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0f64;
    for k in 0..20 {
        let n = if k == 19 { 200 } else { rng.random_range(5..=200) };
        let density = 3.0 / n as f64;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < density || j + 1 == i {
                    let x = rng.random::<f64>() - 0.5;
                    a[(i, j)] = x;
                    a[(j, i)] = x;
                }
            }
        }
        for i in 0..n {
            let row: f64 = a.row(i).iter().map(|x: &f64| x.abs()).sum();
            a[(i, i)] = row + 0.5 + rng.random::<f64>();
        }
        let sp = SparseSym::from_dense(&a, 0.0).unwrap();
        let factor = cholesky(&sp).unwrap();
        let sel = partial_inverse(&factor, sp.pattern()).unwrap();
        let inv = a.try_inverse().unwrap();
        let (got, want): (Vec<f64>, Vec<f64>) = sel.iter().map(|(i, j, x)| (x, inv[(i, j)])).unzip();
        worst = worst.max(rel_err(&got, &want));
    }
    (worst <= TAKAHASHI_TOL, format!("20 matrices up to order 200, worst error {worst:.2e} (tol {TAKAHASHI_TOL:.0e})"))
}

fn criterion_data_precision() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0f64;
    let mut cases = 0;
    let mut largest = 0;
    for (rows, cols, rings) in [(2, 3, 1), (3, 3, 1), (4, 4, 1), (5, 5, 0), (6, 7, 0), (6, 10, 0), (7, 8, 0)] {
        let spec = if rings == 0 { BoundarySpec::none() } else { BoundarySpec::doubling(rings) };
        let mesh = grid_mesh(rows, cols, &spec).unwrap();
        if mesh.n_vertices() > 60 {
            continue;
        }
        largest = largest.max(mesh.n_vertices());
        let fem = assemble_fem::<f64>(&mesh).unwrap();
        let idx: Vec<usize> = if rings == 0 {
            (0..mesh.n_vertices()).filter(|_| rng.random::<f64>() < 0.6).collect()
        } else {
            mesh.data_indices().to_vec()
        };
        for kappa in [0.1, 0.7, 3.0] {
            let q = spde_precision(&fem, kappa).unwrap();
            let r = data_precision(&q, &idx).unwrap().to_dense();
            let want = dense_data_precision(&dense_q(&fem, kappa), &idx);
            worst = worst.max(rel_err(r.as_slice(), want.as_slice()));
            cases += 1;
        }
    }
    (
        worst <= DATA_PRECISION_TOL,
        format!("{cases} cases, meshes up to N = {largest}, worst error {worst:.2e} (tol {DATA_PRECISION_TOL:.0e})"),
    )
}

// ---------------------------------------------------------------------------
// Excursion oracle

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// `P(X > 0)` for `X ~ N(mu, cov)` of dimension at most 3, conditioning on
/// the first coordinate and integrating with Gauss-Legendre nodes.
fn orthant(mu: &[f64], cov: &DMatrix<f64>, gl: &(Vec<f64>, Vec<f64>)) -> f64 {
    let nd = std_normal();
    match mu.len() {
        0 => 1.0,
        1 => {
            if cov[(0, 0)] == 0.0 {
                (mu[0] > 0.0) as u8 as f64
            } else {
                nd.cdf(mu[0] / cov[(0, 0)].sqrt())
            }
        }
        k => {
            let s0 = cov[(0, 0)].sqrt();
            let lo = -mu[0] / s0;
            let hi = lo.max(0.0) + 10.0;
            let lo = lo.max(-10.0);
            let rest = k - 1;
            let b = DMatrix::from_fn(rest, 1, |i, _| cov[(i + 1, 0)] / cov[(0, 0)]);
            let ccov = DMatrix::from_fn(rest, rest, |i, j| cov[(i + 1, j + 1)] - cov[(i + 1, 0)] * cov[(0, j + 1)] / cov[(0, 0)]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let mut total = 0.0;
            for (x, w) in gl.0.iter().zip(&gl.1) {
                let t = mid + half * x;
                let dev = s0 * t;
                let cm: Vec<f64> = (0..rest).map(|i| mu[i + 1] + b[(i, 0)] * dev).collect();
                total += w * half * (-0.5 * t * t).exp() / (2.0 * PI).sqrt() * orthant(&cm, &ccov, gl);
            }
            total
        }
    }
}

/// Largest prefix of the locations ordered by marginal exceedance
/// probability (among those with marginal at least `1 - alpha`) whose
/// joint exceedance probability is at least `1 - alpha`.
fn exact_excursion_size(mean: &[f64], cov: &DMatrix<f64>, gamma: f64, alpha: f64, gl: &(Vec<f64>, Vec<f64>)) -> usize {
    let nd = std_normal();
    let mut cand: Vec<(f64, usize)> = (0..mean.len())
        .map(|i| (nd.cdf((mean[i] - gamma) / cov[(i, i)].sqrt()), i))
        .filter(|(p, _)| *p >= 1.0 - alpha)
        .collect();
    cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut best = 0;
    for k in 1..=cand.len() {
        let idx: Vec<usize> = cand[..k].iter().map(|c| c.1).collect();
        let mu: Vec<f64> = idx.iter().map(|&i| mean[i] - gamma).collect();
        let sub = DMatrix::from_fn(k, k, |a, b| cov[(idx[a], idx[b])]);
        if orthant(&mu, &sub, gl) >= 1.0 - alpha {
            best = k;
        }
    }
    best
}

fn criterion_excursion() -> (bool, String) {
    let gl = gauss_legendre(200);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (gamma, alpha) = (1.0, 0.1);
    let mut agree = 0;
    let mut exact_match = 0;
    for case in 0..50 {
        let g = DMatrix::from_fn(3, 3, |_, _| normal_draw(&mut rng));
        let mut cov = &g * g.transpose() + DMatrix::identity(3, 3) * 0.2;
        let sd = DVector::from_fn(3, |i, _| 1.0 / cov[(i, i)].sqrt());
        cov = DMatrix::from_diagonal(&sd) * cov * DMatrix::from_diagonal(&sd);
        let mean: Vec<f64> = (0..3).map(|_| gamma + 1.2 + 0.8 * normal_draw(&mut rng)).collect();
        let field = CovarianceField::new(&cov).unwrap();
        let r = excursion_set(&mean, &field, gamma, alpha, Direction::Positive, EXCURSION_SAMPLES, 900 + case).unwrap();
        let want = exact_excursion_size(&mean, &cov, gamma, alpha, &gl);
        let got = r.size();
        if got.abs_diff(want) <= 1 {
            agree += 1;
        }
        if got == want {
            exact_match += 1;
        }
    }
    (
        agree >= EXCURSION_MIN_AGREE,
        format!("{agree}/50 within one location ({exact_match} exact), need {EXCURSION_MIN_AGREE}"),
    )
}

// ---------------------------------------------------------------------------
// Simulation study

fn target_dir() -> PathBuf {
    std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target"))
        .join("acceptance")
}

fn study_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml("seed = 2024\n", &[]).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn cached_or_run(cfg: &PipelineConfig) -> stica::Result<()> {
    if let Ok(text) = fs::read_to_string(cfg.out.join("manifest.toml")) {
        if let Ok(m) = toml::from_str::<Manifest>(&text) {
            if m.config == *cfg && m.stages.len() == cfg.stages.len() {
                eprintln!("reusing {}", cfg.out.display());
                return Ok(());
            }
        }
    }
    let _ = fs::remove_dir_all(&cfg.out);
    run_pipeline(cfg).map(|_| ())
}

struct Row {
    method: String,
    subject: usize,
    ic: usize,
    values: Vec<(String, f64)>,
}

impl Row {
    fn get(&self, k: &str) -> f64 {
        self.values.iter().find(|(n, _)| n == k).map_or(f64::NAN, |x| x.1)
    }
}

fn read_rows(path: &Path) -> Vec<Row> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            Row {
                method: rec[0].to_string(),
                subject: rec[1].parse().unwrap(),
                ic: rec[2].parse().unwrap(),
                values: header[3..].iter().cloned().zip(rec.iter().skip(3).map(|x| x.parse().unwrap())).collect(),
            }
        })
        .collect()
}

fn criterion_study() -> Vec<(bool, String)> {
    let cfg = study_config(&target_dir().join("study"));
    let start = Instant::now();
    if let Err(e) = cached_or_run(&cfg) {
        let msg = format!("pipeline failed: {e}");
        return vec![(false, msg.clone()), (false, msg.clone()), (false, msg.clone()), (false, msg)];
    }
    let wall = start.elapsed().as_secs_f64();
    let rows = read_rows(&cfg.out.join("evaluate/metrics_subjects.csv"));
    let find = |m: &str, s: usize, l: usize| rows.iter().find(|r| r.method == m && r.subject == s && r.ic == l).unwrap();
    let (n_sub, n_ic) = (cfg.simulate.subjects, cfg.simulate.population.peaks.len());

    let mut ordered = 0;
    for s in 1..=n_sub {
        for l in 1..=n_ic {
            let (a, b, c) = (find("stica", s, l).get("corr"), find("tica", s, l).get("corr"), find("dr", s, l).get("corr"));
            if a > b && b > c {
                ordered += 1;
            }
        }
    }
    let pairs = n_sub * n_ic;
    let a = (
        ordered >= ORDERING_MIN_PAIRS,
        format!("correlation ordering stICA > tICA > DR in {ordered}/{pairs} pairs, need {ORDERING_MIN_PAIRS} ({wall:.0} s)"),
    );

    let mean_of = |m: &str, l: Option<usize>, k: &str| {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == m && l.is_none_or(|l| r.ic == l))
            .map(|r| r.get(k))
            .filter(|x| !x.is_nan())
            .collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let fpr = mean_of("stica", None, "fpr");
    let b = (fpr <= MAX_FPR, format!("mean stICA FPR {fpr:.4}, limit {MAX_FPR}"));

    let mut ok = true;
    let mut parts = Vec::new();
    for l in 1..=n_ic {
        let (ps, pt) = (mean_of("stica", Some(l), "power"), mean_of("tica", Some(l), "power"));
        ok &= ps > pt && ps >= MIN_POWER;
        parts.push(format!("IC{l} {ps:.3} vs {pt:.3}"));
    }
    let c = (ok, format!("mean power stICA vs tICA: {}; stICA needs >= {MIN_POWER}", parts.join(", ")));

    let mut r = csv::Reader::from_path(cfg.out.join("evaluate/fc_mse.csv")).unwrap();
    let fc: Vec<(String, String, f64)> = r
        .records()
        .map(|x| {
            let x = x.unwrap();
            (x[0].to_string(), format!("{}-{}", &x[1], &x[2]), x[3].parse().unwrap())
        })
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, pair, st) in fc.iter().filter(|x| x.0 == "stica") {
        let dr = fc.iter().find(|x| x.0 == "dr" && &x.1 == pair).unwrap().2;
        ok &= st <= &dr;
        parts.push(format!("{pair} {st:.2e} vs {dr:.2e}"));
        let _ = m;
    }
    let d = (ok, format!("FC MSE stICA vs DR: {}", parts.join(", ")));
    vec![a, b, c, d]
}

fn criterion_calibration() -> (bool, String) {
    let (rows, cols, l) = (12, 12, 2);
    let v = rows * cols;
    let gamma = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let m = DMatrix::from_fn(l, l, |i, j| if i == j { 1.0 } else { 0.3 });
    let c = DMatrix::from_fn(l, l, |i, j| if i == j { 1.0 } else { 0.2 });
    let params = ModelParams::new(m.clone(), vec![], 0.8, c.clone()).unwrap();
    let noise = (&c * params.nu0_sq).cholesky().unwrap().l();
    let d = DMatrix::from_fn(l, v, |_, _| 0.3 + rng.random::<f64>());
    let s0 = DMatrix::from_element(l, v, gamma);
    let mut hits = 0;
    for seed in 0..NULL_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed as u64);
        let e = DMatrix::from_fn(l, v, |_, _| normal_draw(&mut rng));
        let y = &m * &s0 + &noise * e;
        let data = EmData::with_prior_sd(y, s0.clone(), d.clone()).unwrap();
        let mom = tica_e_step(&params, &data).unwrap();
        let sd = mom.marginal_sd();
        let any = (0..l).any(|ic| {
            let mean: Vec<f64> = mom.mu.row(ic).iter().copied().collect();
            let s: Vec<f64> = sd.row(ic).iter().copied().collect();
            bonferroni_mask(&mean, &s, gamma, NULL_ALPHA, Direction::Positive).unwrap().iter().any(|&b| b)
        });
        hits += any as usize;
    }
    let n = NULL_SEEDS as f64;
    let upper = NULL_ALPHA * n + 1.96 * (n * NULL_ALPHA * (1.0 - NULL_ALPHA)).sqrt();
    (
        hits as f64 <= upper,
        format!("familywise false positives in {hits}/{NULL_SEEDS} null datasets, band upper limit {upper:.1}"),
    )
}

fn small_config(out: &Path) -> PipelineConfig {
    let text = r#"
seed = 5
[simulate]
subjects = 2
t = 200
pool_size = 8
boundary_rings = 1
[simulate.population]
dims = { rows = 16, cols = 18 }
var_scale = 1.0
peaks = [
  { center = [4, 4], amplitude = 9.0, fwhm = 8.0 },
  { center = [11, 13], amplitude = 9.0, fwhm = 10.0 },
]
[template]
subjects = 200
[excursions]
samples = 2000
"#;
    let mut cfg = PipelineConfig::from_toml(text, &[]).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn csv_files(root: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            csv_files(&p, out);
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
}

fn criterion_determinism() -> (bool, String) {
    let root = target_dir().join("determinism");
    let _ = fs::remove_dir_all(&root);
    let (a, b) = (root.join("a"), root.join("b"));
    if let Err(e) = run_pipeline(&small_config(&a)).and_then(|_| run_pipeline(&small_config(&b))) {
        return (false, format!("pipeline failed: {e}"));
    }
    let mut files = Vec::new();
    csv_files(&a, &mut files);
    let mut differing = Vec::new();
    for f in &files {
        let rel = f.strip_prefix(&a).unwrap();
        if fs::read(f).ok() != fs::read(b.join(rel)).ok() {
            differing.push(rel.display().to_string());
        }
    }
    let mut other = Vec::new();
    csv_files(&b, &mut other);
    let ok = differing.is_empty() && other.len() == files.len() && !files.is_empty();
    (ok, format!("{} CSV files compared, {} differ", files.len(), differing.len()))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // selects nothing here, so it skips the run.
    if std::env::args().skip(1).any(|a| !a.starts_with('-')) {
        return;
    }
    let mut results: Vec<(String, (bool, String))> = Vec::new();
    let mut report = |name: &str, r: (bool, String)| {
        println!("{} {name}: {}", if r.0 { "PASS" } else { "FAIL" }, r.1);
        results.push((name.to_string(), r));
    };
    report("1 dense EM oracle", criterion_dense_em());
    report("2 EM monotonicity", criterion_monotone());
    report("3 selected inversion", criterion_takahashi());
    report("4 data precision", criterion_data_precision());
    report("5 excursion oracle", criterion_excursion());
    if std::env::var_os("STICA_ACCEPTANCE_SKIP_STUDY").is_some() {
        println!("SKIP 6 simulation study: STICA_ACCEPTANCE_SKIP_STUDY is set");
    } else {
        let names = ["6a IC ordering", "6b stICA FPR", "6c power", "6d FC MSE"];
        for (name, r) in names.iter().zip(criterion_study()) {
            report(name, r);
        }
    }
    report("7 Bonferroni calibration", criterion_calibration());
    report("8 determinism", criterion_determinism());
    let passed = results.iter().filter(|r| r.1 .0).count();
    println!("{passed}/{} criteria passed", results.len());
}
