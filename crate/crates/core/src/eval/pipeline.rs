//! Configured end-to-end simulation study.
//!
//! Output layout under `out`:
//!
//! ```text
//! manifest.toml
//! simulate/                      generating maps, mesh, subject_<i>/ truth and data
//! template/
//! subject_<i>/preprocess/
//! subject_<i>/<method>/          fits
//! subject_<i>/<method>/masks/    engagement masks
//! evaluate/                      metric tables and heatmaps
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::heatmap::{data_range, emit_heatmap};
use super::metrics::{evaluate, rescale_to_truth, EvalInput, MetricsReport, SubjectMasks, DEFAULT_CAT_THRESHOLD};
use super::stages::*;
use crate::error::{Error, Result};
use crate::inference::{fc_matrix, Direction};
use crate::io::{read_matrix_csv, write_map_csv};
use crate::template::subject_seed;

pub const STAGES: [&str; 6] = ["simulate", "template", "preprocess", "fit", "excursions", "evaluate"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub cat_threshold: f64,
    pub heatmaps: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            cat_threshold: DEFAULT_CAT_THRESHOLD,
            heatmaps: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub stages: Vec<String>,
    pub simulate: SimulateConfig,
    pub template: TemplateConfig,
    pub preprocess: PreprocessConfig,
    pub fit: FitConfig,
    pub excursions: ExcursionConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out: PathBuf::from("run"),
            seed: 1,
            stages: STAGES.iter().map(|s| s.to_string()).collect(),
            simulate: SimulateConfig::default(),
            template: TemplateConfig::default(),
            preprocess: PreprocessConfig::default(),
            fit: FitConfig::default(),
            excursions: ExcursionConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(e.to_string())
}

impl PipelineConfig {
    /// Parses a config and applies `section.key=value` overrides on top.
    /// Values are read as TOML, falling back to a bare string.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(toml_error)?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override {o:?} is not key=value")))?;
            let value = parse_value(value.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts.pop().filter(|k| !k.is_empty());
            let last = last.ok_or_else(|| Error::InvalidArgument(format!("empty key in {o:?}")))?;
            let mut t = &mut table;
            for p in parts {
                t = t
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| Error::InvalidArgument(format!("{p} is not a section")))?;
            }
            t.insert(last.to_string(), value);
        }
        let cfg: PipelineConfig = table.try_into().map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::parse(path, m),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    fn validate(&self) -> Result<()> {
        for s in &self.stages {
            if !STAGES.contains(&s.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown stage {s:?}")));
            }
        }
        Ok(())
    }

    /// Seed of a stage, derived from the master seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let i = STAGES.iter().position(|s| *s == stage).unwrap_or(STAGES.len());
        subject_seed(self.seed, i as u64)
    }
}

fn parse_value(s: &str) -> toml::Value {
    format!("v = {s}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(s.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub config: PipelineConfig,
}

/// Runs the configured stages in order and writes `manifest.toml`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        stages: Vec::new(),
        config: cfg.clone(),
    };
    write_manifest(&cfg.out, &manifest)?;
    for name in &cfg.stages {
        let start = Instant::now();
        run_stage(cfg, name).map_err(|e| Error::Stage {
            stage: name.clone(),
            source: Box::new(e),
        })?;
        manifest.stages.push(StageRecord {
            name: name.clone(),
            seed: cfg.stage_seed(name),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        write_manifest(&cfg.out, &manifest)?;
    }
    Ok(manifest)
}

fn write_manifest(out: &Path, m: &Manifest) -> Result<()> {
    fs::write(out.join("manifest.toml"), toml::to_string(m).map_err(toml_error)?)?;
    Ok(())
}

fn sim_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.out.join("simulate")
}

fn template_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.out.join("template")
}

fn work_dir(cfg: &PipelineConfig, i: usize) -> PathBuf {
    subject_dir(&cfg.out, i)
}

fn run_stage(cfg: &PipelineConfig, name: &str) -> Result<()> {
    let seed = cfg.stage_seed(name);
    let n = cfg.simulate.subjects;
    match name {
        "simulate" => stage_simulate(&cfg.simulate, seed, &sim_dir(cfg)),
        "template" => stage_template_simulated(&sim_dir(cfg), &cfg.template, seed, &template_dir(cfg)).map(|_| ()),
        "preprocess" => {
            for i in 0..n {
                let data = subject_dir(&sim_dir(cfg), i).join("Y.csv");
                let out = work_dir(cfg, i).join("preprocess");
                stage_preprocess(&data, &template_dir(cfg), &cfg.preprocess, subject_seed(seed, i as u64), &out)?;
            }
            Ok(())
        }
        "fit" => {
            let mesh = sim_dir(cfg).join("mesh.txt");
            let opts = cfg.fit.options();
            for i in 0..n {
                let w = work_dir(cfg, i);
                for &m in &cfg.fit.methods {
                    stage_fit(m, &w.join("preprocess"), &template_dir(cfg), Some(&mesh), &opts, &w.join(m.name()))?;
                }
            }
            Ok(())
        }
        "excursions" => {
            for i in 0..n {
                let truth = read_ic_maps(&subject_dir(&sim_dir(cfg), i), "ic")?;
                for (k, &m) in cfg.fit.methods.iter().enumerate() {
                    let dir = work_dir(cfg, i).join(m.name());
                    let s = subject_seed(seed, (i * cfg.fit.methods.len() + k) as u64);
                    stage_excursions(&dir, m, &cfg.excursions, Direction::Positive, Some(&truth), s, &dir.join("masks"))?;
                }
            }
            Ok(())
        }
        "evaluate" => stage_evaluate(cfg),
        _ => Err(Error::InvalidArgument(format!("unknown stage {name:?}"))),
    }
}

pub fn mask_rule(m: FitMethod) -> MaskRule {
    match m {
        FitMethod::Stica => MaskRule::Joint,
        FitMethod::Tica => MaskRule::Bonferroni,
    }
}

/// Engagement masks of every IC of the fit in `fit_dir`, written as
/// `mask_<l>.csv` (`mask_neg_<l>.csv` for the negative direction). With a
/// truth, the threshold applies to the fitted maps rescaled to it. With
/// `cfg.deviations`, also writes `dev_pos_<l>.csv` and `dev_neg_<l>.csv`.
pub fn stage_excursions(
    fit_dir: &Path,
    method: FitMethod,
    cfg: &ExcursionConfig,
    direction: Direction,
    truth: Option<&DMatrix<f64>>,
    seed: u64,
    out: &Path,
) -> Result<Vec<Vec<bool>>> {
    fs::create_dir_all(out)?;
    let fit = read_fit(fit_dir)?;
    let (l, v) = fit.posterior.mean.shape();
    let prefix = match direction {
        Direction::Positive => "mask",
        Direction::Negative => "mask_neg",
    };
    let mut masks = Vec::with_capacity(l);
    for ic in 0..l {
        let scale = match truth {
            Some(t) => {
                let est: Vec<f64> = fit.posterior.mean.row(ic).iter().copied().collect();
                let tr: Vec<f64> = t.row(ic).iter().copied().collect();
                rescale_to_truth(&est, &tr)?.factor
            }
            None => 1.0,
        };
        let ic_seed = subject_seed(seed, 3 * ic as u64);
        let mask = if scale == 0.0 {
            vec![false; v]
        } else {
            let r = engagement_mask(
                &fit,
                ic,
                mask_rule(method),
                cfg.gamma,
                cfg.alpha,
                direction,
                scale,
                cfg.samples,
                ic_seed,
            )?;
            r.mask
        };
        write_mask_csv(&out.join(format!("{prefix}_{}.csv", ic + 1)), &mask)?;
        masks.push(mask);
        if cfg.deviations {
            for (k, (d, name)) in [(Direction::Positive, "dev_pos"), (Direction::Negative, "dev_neg")].into_iter().enumerate() {
                let s = subject_seed(seed, 3 * ic as u64 + 1 + k as u64);
                let m = deviation_mask(&fit, ic, mask_rule(method), cfg.alpha, d, cfg.samples, s)?;
                write_mask_csv(&out.join(format!("{name}_{}.csv", ic + 1)), &m)?;
            }
        }
    }
    Ok(masks)
}

/// Method labels in evaluation tables; `dr` is dual regression.
pub const DUAL_REGRESSION: &str = "dr";

struct Collected {
    name: String,
    input: EvalInput,
}

fn rescale_rows(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = est.clone();
    let mut factors = Vec::with_capacity(est.nrows());
    for l in 0..est.nrows() {
        let e: Vec<f64> = est.row(l).iter().copied().collect();
        let t: Vec<f64> = truth.row(l).iter().copied().collect();
        let r = rescale_to_truth(&e, &t)?;
        for (j, x) in r.map.into_iter().enumerate() {
            out[(l, j)] = x;
        }
        factors.push(r.factor);
    }
    Ok((out, factors))
}

fn signed_fc(timecourses: &DMatrix<f64>, factors: &[f64]) -> Result<DMatrix<f64>> {
    let mut a = timecourses.clone();
    for (j, f) in factors.iter().enumerate() {
        if *f < 0.0 {
            a.column_mut(j).neg_mut();
        }
    }
    fc_matrix(&a)
}

fn collect_method(cfg: &PipelineConfig, method: Option<FitMethod>) -> Result<Collected> {
    let n = cfg.simulate.subjects;
    let mut input = EvalInput::default();
    let mut masks = Vec::new();
    let mut true_masks = Vec::new();
    let mut fc_est = Vec::new();
    let mut fc_true = Vec::new();
    for i in 0..n {
        let sdir = subject_dir(&sim_dir(cfg), i);
        let truth = read_ic_maps(&sdir, "ic")?;
        let w = work_dir(cfg, i);
        let (est, tc) = match method {
            Some(m) => {
                let d = w.join(m.name());
                (read_ic_maps(&d, "ic")?, read_matrix_csv(&d.join("timecourses.csv"))?)
            }
            None => {
                let d = w.join("preprocess");
                (read_ic_maps(&d, "dr_ic")?, read_matrix_csv(&d.join("dr_mixing.csv"))?)
            }
        };
        let (scaled, factors) = rescale_rows(&est, &truth)?;
        fc_est.push(signed_fc(&tc, &factors)?);
        fc_true.push(fc_matrix(&read_matrix_csv(&sdir.join("mixing.csv"))?)?);
        if let Some(m) = method {
            let mdir = w.join(m.name()).join("masks");
            let mut subj: SubjectMasks = Vec::new();
            for l in 0..truth.nrows() {
                subj.push(read_mask_csv(&mdir.join(format!("mask_{}.csv", l + 1)))?);
            }
            masks.push(subj);
            true_masks.push(
                (0..truth.nrows())
                    .map(|l| truth.row(l).iter().map(|&x| x > cfg.excursions.gamma).collect())
                    .collect(),
            );
        }
        input.estimates.push(scaled);
        input.truths.push(truth);
    }
    if method.is_some() {
        input.masks = Some(masks);
        input.true_masks = Some(true_masks);
    }
    input.fc_est = Some(fc_est);
    input.fc_true = Some(fc_true);
    Ok(Collected {
        name: method.map_or(DUAL_REGRESSION, |m| m.name()).to_string(),
        input,
    })
}

fn mean_ignoring_nan<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    let (s, n) = xs.filter(|x| !x.is_nan()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

const SUBJECT_COLUMNS: [&str; 9] = ["corr", "corr_z", "cat", "cat_z", "fpr", "power", "dice", "mask_size", "true_size"];

fn subject_tables(r: &MetricsReport) -> Vec<Option<&DMatrix<f64>>> {
    vec![
        Some(&r.corr),
        Some(&r.corr_z),
        Some(&r.cat),
        Some(&r.cat_z),
        r.fpr.as_ref(),
        r.power.as_ref(),
        r.dice.as_ref(),
        r.mask_size.as_ref(),
        r.true_size.as_ref(),
    ]
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

/// Writes `metrics_subjects.csv`, `metrics_summary.csv`, `fc_mse.csv`,
/// `mse_<method>_<l>.csv` and heatmaps.
pub fn write_reports(out: &Path, reports: &[(String, MetricsReport)], heatmaps: Option<crate::template::Dims>) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("metrics_subjects.csv"))?;
    let mut header = vec!["method", "subject", "ic"];
    header.extend(SUBJECT_COLUMNS);
    w.write_record(&header)?;
    for (name, r) in reports {
        let tables = subject_tables(r);
        for s in 0..r.n_subjects() {
            for l in 0..r.n_ics() {
                let mut rec = vec![name.clone(), (s + 1).to_string(), (l + 1).to_string()];
                rec.extend(tables.iter().map(|t| t.map_or("NaN".into(), |t| fmt(t[(s, l)]))));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("metrics_summary.csv"))?;
    let mut header = vec!["method", "ic", "mse"];
    header.extend(SUBJECT_COLUMNS);
    w.write_record(&header)?;
    for (name, r) in reports {
        let tables = subject_tables(r);
        for l in 0..r.n_ics() {
            let mut rec = vec![name.clone(), (l + 1).to_string(), fmt(r.mse.row(l).mean())];
            rec.extend(tables.iter().map(|t| t.map_or("NaN".into(), |t| fmt(mean_ignoring_nan(t.column(l).iter())))));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("fc_mse.csv"))?;
    w.write_record(["method", "ic_a", "ic_b", "mse"])?;
    for (name, r) in reports {
        if let Some(f) = &r.fc_mse {
            for a in 0..f.nrows() {
                for b in a + 1..f.ncols() {
                    w.write_record([name.clone(), (a + 1).to_string(), (b + 1).to_string(), fmt(f[(a, b)])])?;
                }
            }
        }
    }
    w.flush()?;

    for (name, r) in reports {
        for l in 0..r.n_ics() {
            let map: Vec<f64> = r.mse.row(l).iter().copied().collect();
            write_map_csv(&out.join(format!("mse_{name}_{}.csv", l + 1)), &map)?;
        }
    }
    if let Some(dims) = heatmaps {
        let l = reports.first().map_or(0, |r| r.1.n_ics());
        for ic in 0..l {
            let all: Vec<f64> = reports.iter().flat_map(|(_, r)| r.mse.row(ic).iter().copied().collect::<Vec<_>>()).collect();
            let range = (0.0, data_range(&all).1);
            for (name, r) in reports {
                let map: Vec<f64> = r.mse.row(ic).iter().copied().collect();
                emit_heatmap(&out.join(format!("mse_{name}_{}.pgm", ic + 1)), &map, dims, range)?;
            }
        }
    }
    Ok(())
}

/// Evaluates every fitted method and dual regression against the truth.
pub fn stage_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let mut reports = Vec::new();
    for m in std::iter::once(None).chain(cfg.fit.methods.iter().map(|m| Some(*m))) {
        let c = collect_method(cfg, m)?;
        reports.push((c.name, evaluate(&c.input, cfg.evaluate.cat_threshold)?));
    }
    let dims = if cfg.evaluate.heatmaps { Some(read_dims(&sim_dir(cfg))?) } else { None };
    write_reports(&cfg.out.join("evaluate"), &reports, dims)?;
    if cfg.evaluate.heatmaps {
        let dims = read_dims(&sim_dir(cfg))?;
        let truth = read_ic_maps(&subject_dir(&sim_dir(cfg), 0), "ic")?;
        let range = data_range(truth.as_slice());
        for l in 0..truth.nrows() {
            let map: Vec<f64> = truth.row(l).iter().copied().collect();
            emit_heatmap(&cfg.out.join("evaluate").join(format!("truth_subject1_{}.pgm", l + 1)), &map, dims, range)?;
        }
    }
    Ok(())
}

/// Reads `metrics_summary.csv` into `(method, ic) -> column -> value`.
pub fn read_summary(path: &Path) -> Result<Vec<(String, usize, Vec<(String, f64)>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let ic = rec[1].parse().map_err(|_| Error::parse(path, "bad IC index"))?;
        let vals = header[2..]
            .iter()
            .zip(rec.iter().skip(2))
            .map(|(h, v)| Ok((h.clone(), v.parse::<f64>().map_err(|_| Error::parse(path, format!("bad value {v:?}")))?)))
            .collect::<Result<Vec<_>>>()?;
        out.push((rec[0].to_string(), ic, vals));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_over_file() {
        let cfg = PipelineConfig::from_toml(
            "seed = 3\n[fit]\ntol = 0.01\n",
            &["fit.tol=0.5".into(), "seed=9".into(), "out=elsewhere".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.fit.tol, 0.5);
        assert_eq!(cfg.out, PathBuf::from("elsewhere"));
        assert_eq!(cfg.fit.max_iter, FitConfig::default().max_iter);
    }

    #[test]
    fn unknown_keys_and_stages_are_rejected() {
        assert!(PipelineConfig::from_toml("[fit]\ntoll = 1\n", &[]).is_err());
        assert!(PipelineConfig::from_toml("stages = [\"fitt\"]\n", &[]).is_err());
    }

    #[test]
    fn config_round_trips() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap(), cfg);
    }

    #[test]
    fn empty_stage_list_writes_only_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out: dir.path().join("run"),
            stages: vec![],
            ..Default::default()
        };
        let m = run_pipeline(&cfg).unwrap();
        assert!(m.stages.is_empty());
        let names: Vec<_> = fs::read_dir(&cfg.out).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("manifest.toml")]);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out: dir.path().join("run"),
            stages: vec!["fit".into()],
            ..Default::default()
        };
        match run_pipeline(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "fit"),
            other => panic!("expected a stage error, got {other:?}"),
        }
    }
}
