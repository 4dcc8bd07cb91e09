use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stica::eval::pipeline::{run_pipeline, stage_evaluate, stage_excursions, PipelineConfig};
use stica::eval::stages::*;
use stica::inference::Direction;
use stica::template::Dims;

#[derive(Parser)]
#[command(name = "stica", version, about = "Spatial template ICA: simulation, fitting and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate subjects from a population design.
    Simulate(SimulateArgs),
    /// Estimate a template of IC means and between-subject variances.
    Template(TemplateArgs),
    /// Centre, denoise and dimension-reduce one subject's timeseries.
    Preprocess(PreprocessArgs),
    /// Fit the spatial or the independent template ICA model.
    Fit(FitArgs),
    /// Engagement and deviation masks of a fit.
    Excursions(ExcursionArgs),
    /// Metric tables and heatmaps of a pipeline run.
    Evaluate(ConfigArgs),
    /// Run the configured stages end to end.
    Pipeline(ConfigArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Pipeline config whose `[simulate]` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    /// Timepoints per subject.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Grid size as `ROWSxCOLS`; keeps the configured peaks.
    #[arg(long)]
    dims: Option<String>,
    /// `T x P` CSV of candidate timecourses.
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Args)]
struct TemplateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Simulation directory; the template is estimated from fresh draws of
    /// its generating maps.
    #[arg(long, conflicts_with = "subject_dirs")]
    from_sim: Option<PathBuf>,
    /// Directories holding `ic_<l>.csv` maps.
    #[arg(long, num_args = 1..)]
    subject_dirs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    subjects: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// `T x V` CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of ICs; defaults to all template ICs.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long, default_value_t = 1)]
    nuisance_iters: usize,
    /// Fixed number of nuisance components instead of the estimated one.
    #[arg(long)]
    nuisance_count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value = "stica")]
    method: FitMethod,
    /// Output directory of `preprocess`.
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    template: PathBuf,
    /// Mesh file; required by the spatial model.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// `common` or `per-ic`.
    #[arg(long, default_value = "common")]
    mode: String,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    no_squarem: bool,
    /// Starting kappa; skips its initial search.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct ExcursionArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value = "stica")]
    method: FitMethod,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value = "pos")]
    direction: Direction,
    #[arg(long, default_value_t = stica::inference::DEFAULT_EXCURSION_SAMPLES)]
    samples: usize,
    /// Also write deviation sets of the subject effects.
    #[arg(long)]
    deviations: bool,
    /// Directory with true `ic_<l>.csv` maps; thresholds then apply in
    /// truth units.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(o) = &self.out {
            overrides.push(format!("out = {:?}", o.display().to_string()));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed = {s}"));
        }
        Ok(match &self.config {
            Some(p) => PipelineConfig::read(p, &overrides)?,
            None => PipelineConfig::from_toml("", &overrides)?,
        })
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::read(p, &[])?.simulate,
        None => SimulateConfig::default(),
    };
    if let Some(n) = a.subjects {
        cfg.subjects = n;
    }
    if let Some(t) = a.t {
        cfg.t = t;
    }
    if let Some(s) = a.noise_sd {
        cfg.noise_sd = s;
    }
    if let Some(d) = &a.dims {
        cfg.population.dims = Dims::parse(d)?;
    }
    if a.pool.is_some() {
        cfg.pool = a.pool;
    }
    stage_simulate(&cfg, a.seed, &a.out)?;
    Ok(())
}

fn template(a: TemplateArgs) -> Result<()> {
    let t = match (&a.from_sim, a.subject_dirs.is_empty()) {
        (Some(sim), true) => stage_template_simulated(sim, &TemplateConfig { subjects: a.subjects }, a.seed, &a.out)?,
        (None, false) => stage_template_from_dirs(&a.subject_dirs, &a.out)?,
        _ => bail!("give either --from-sim or --subject-dirs"),
    };
    eprintln!("template: {} ICs, {} locations", t.n_ics(), t.n_locations());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = PreprocessConfig {
        l: a.l,
        nuisance_count: a.nuisance_count,
        nuisance_iters: a.nuisance_iters,
    };
    let red = stage_preprocess(&a.data, &a.template, &cfg, a.seed, &a.out)?;
    eprintln!("reduced to {} ICs, noise variance {:.4}", red.n_ics(), red.nu0_sq);
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let mode = match a.mode.as_str() {
        "common" => ModeName::Common,
        "per-ic" => ModeName::PerIc,
        m => bail!("unknown mode {m:?}"),
    };
    let mut cfg = FitConfig {
        mode,
        squarem: !a.no_squarem,
        initial_kappa: a.kappa,
        ..Default::default()
    };
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    if let Some(n) = a.max_iter {
        cfg.max_iter = n;
    }
    let fit = stage_fit(a.method, &a.pre, &a.template, a.mesh.as_deref(), &cfg.options(), &a.out)?;
    eprintln!(
        "{}: {} iterations, converged {}, kappa {:?}, {:.1} s",
        a.method.name(),
        fit.iterations,
        fit.converged,
        fit.params.kappas,
        fit.wall_seconds
    );
    Ok(())
}

fn excursions(a: ExcursionArgs) -> Result<()> {
    let cfg = ExcursionConfig {
        gamma: a.gamma,
        alpha: a.alpha,
        samples: a.samples,
        deviations: a.deviations,
    };
    let truth = a.truth.as_deref().map(|d| read_ic_maps(d, "ic")).transpose()?;
    let masks = stage_excursions(&a.fit, a.method, &cfg, a.direction, truth.as_ref(), a.seed, &a.out)?;
    for (l, m) in masks.iter().enumerate() {
        eprintln!("IC {}: {} locations", l + 1, m.iter().filter(|&&x| x).count());
    }
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Template(a) => template(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Fit(a) => fit(a),
        Command::Excursions(a) => excursions(a),
        Command::Evaluate(a) => {
            let cfg = a.load()?;
            stage_evaluate(&cfg).context("evaluate")?;
            eprintln!("metrics written to {}", cfg.out.join("evaluate").display());
            Ok(())
        }
        Command::Pipeline(a) => {
            let cfg = a.load()?;
            let m = run_pipeline(&cfg)?;
            for s in &m.stages {
                eprintln!("{:<11} {:>9.1} s", s.name, s.wall_seconds);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
