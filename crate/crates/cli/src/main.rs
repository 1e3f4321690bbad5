//! `addt`: fit, knot selection, bootstrap, MTTF and simulation studies for
//! accelerated destructive degradation test data.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use addt_core::bootstrap::{bias_corrected_ci, quantile_ci, resample_and_refit};
use addt_core::bspline::SplineSpec;
use addt_core::dataset::{load_addt_csv, StressSet};
use addt_core::fit::profile_fit;
use addt_core::knotsel::select_spec;
use addt_core::reliability::mttf;
use addt_core::simulation::{run_misspec_study, run_recovery_study, Truth};
use addt_core::{
    AddtDataset, BootstrapOptions, BootstrapResult, FitControls, KnotPolicy, ModelFit,
    SelectionControls, SimulationScenario, Threshold, DEFAULT_KELVIN_OFFSET,
};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "addt", version, about = "Semi-parametric ADDT analysis")]
struct Cli {
    /// Worker threads for replicate-parallel work.
    #[arg(long, global = true, env = "ADDT_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Fit the model with a given degree and knot count or knot locations.
    Fit(FitArgs),
    /// Choose degree and knots by AIC.
    SelectKnots(SelectArgs),
    /// Residual bootstrap of a saved fit.
    Bootstrap(BootstrapArgs),
    /// Mean time to failure at a use temperature.
    Mttf(MttfArgs),
    /// Run a Monte Carlo study from a scenario file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// CSV with header `temperature,time,response`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KELVIN_OFFSET)]
    kelvin_offset: f64,
    #[arg(long, default_value = "hours")]
    time_unit: String,
}

#[derive(Debug, Args, Serialize)]
struct BetaArgs {
    #[arg(long, default_value_t = 0.0)]
    beta_min: f64,
    #[arg(long, default_value_t = 5.0)]
    beta_max: f64,
    #[arg(long, default_value_t = 21)]
    beta_grid: usize,
    #[arg(long, default_value_t = 1e-4)]
    beta_tol: f64,
}

impl BetaArgs {
    fn controls(&self) -> FitControls {
        FitControls {
            beta_range: [self.beta_min, self.beta_max],
            beta_grid: self.beta_grid,
            beta_tol: self.beta_tol,
            ..FitControls::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct OutputArgs {
    /// JSON result document; printed to stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    beta: BetaArgs,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    /// Number of interior knots at default quantile locations.
    #[arg(long, default_value_t = 3)]
    knots: usize,
    /// Interior knots on the warped time scale, shared by every beta.
    #[arg(long, value_delimiter = ',', conflicts_with = "knots")]
    knot_locations: Option<Vec<f64>>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    beta: BetaArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    degrees: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    n_min: usize,
    #[arg(long, default_value_t = 5)]
    n_max: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct ThresholdArgs {
    /// Use temperature in degrees Celsius.
    #[arg(long)]
    temp: Option<f64>,
    /// Failure threshold on the response scale, or a fraction of the initial
    /// level with `--relative`.
    #[arg(long, requires = "temp")]
    threshold: Option<f64>,
    #[arg(long, requires = "threshold")]
    relative: bool,
}

impl ThresholdArgs {
    fn threshold(&self) -> Option<Threshold> {
        self.threshold.map(|v| {
            if self.relative {
                Threshold::Relative(v)
            } else {
                Threshold::Absolute(v)
            }
        })
    }
}

#[derive(Debug, Args, Serialize)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fit document written by `addt fit` or `addt select-knots`.
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    beta: BetaArgs,
    #[arg(long, short = 'B', default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    mttf: ThresholdArgs,
    /// Per-replicate estimates as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct MttfArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    temp: f64,
    #[arg(long)]
    threshold: f64,
    #[arg(long)]
    relative: bool,
    /// Bootstrap document; adds interval endpoints.
    #[arg(long)]
    bootstrap: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Use the full replication count of the scenario.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of datasets.
    #[arg(long, conflicts_with = "full")]
    datasets: Option<usize>,
    /// Override the bootstrap size per dataset.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Directory for `pointwise.csv` and `coverage.csv`.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    #[command(flatten)]
    out: OutputArgs,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<addt_core::Error> for Failure {
    fn from(e: addt_core::Error) -> Self {
        Failure {
            code: if e.is_validation() { EXIT_VALIDATION } else { EXIT_NUMERICAL },
            error: e.into(),
        }
    }
}

fn invalid(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        error,
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Serialize)]
struct Document<'a, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a Cli,
    threads: usize,
    seed: Option<u64>,
    result: R,
}

#[derive(Deserialize)]
struct Envelope<R> {
    result: R,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => run_fit(cli, a),
        Command::SelectKnots(a) => run_select(cli, a),
        Command::Bootstrap(a) => run_bootstrap(cli, a),
        Command::Mttf(a) => run_mttf(cli, a),
        Command::Simulate(a) => run_simulate(cli, a),
    }
}

fn emit<R: Serialize>(
    cli: &Cli,
    command: &'static str,
    seed: Option<u64>,
    out: &OutputArgs,
    result: R,
    summary: impl FnOnce() -> String,
) -> CliResult<()> {
    let doc = Document {
        tool: "addt",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cli,
        threads: rayon::current_num_threads(),
        seed,
        result,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| invalid(e.into()))?;
    text.push('\n');
    match &out.output {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            print!("{}", summary());
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Writes via a temporary file in the target directory and renames, so a
/// failed run never leaves a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))
        .map_err(invalid)?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(invalid)?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(invalid)?;
    Ok(())
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(invalid)
}

fn load_data(args: &DataArgs) -> CliResult<(AddtDataset, StressSet)> {
    if !(args.kelvin_offset.is_finite() && args.kelvin_offset > 0.0) {
        return Err(invalid(anyhow!("--kelvin-offset must be positive")));
    }
    let data = load_addt_csv(open(&args.input)?, &args.time_unit)
        .map_err(Failure::from)
        .map_err(|f| Failure {
            error: f.error.context(format!("reading {}", args.input.display())),
            ..f
        })?;
    let stresses = StressSet::new(&data, args.kelvin_offset)?;
    Ok((data, stresses))
}

/// Reads a result document or a bare JSON value of type `R`.
fn read_result<R: serde::de::DeserializeOwned>(path: &Path) -> CliResult<R> {
    let value: serde_json::Value = serde_json::from_reader(open(path)?)
        .with_context(|| format!("{} is not JSON", path.display()))
        .map_err(invalid)?;
    let parsed = if value.get("result").is_some() {
        serde_json::from_value::<Envelope<R>>(value).map(|e| e.result)
    } else {
        serde_json::from_value::<R>(value)
    };
    parsed
        .with_context(|| format!("unexpected contents in {}", path.display()))
        .map_err(invalid)
}

/// A fit document may hold a `ModelFit` or a knot-search report.
fn read_fit(path: &Path) -> CliResult<ModelFit> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum FitOrReport {
        Fit(Box<ModelFit>),
        Report { winner_fit: Box<ModelFit> },
    }
    Ok(match read_result::<FitOrReport>(path)? {
        FitOrReport::Fit(f) => *f,
        FitOrReport::Report { winner_fit } => *winner_fit,
    })
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(anyhow!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn fit_summary(fit: &ModelFit) -> String {
    format!(
        "degree {}  interior knots {}\nbeta  {:.6}\nsigma {:.6}\nrho   {:.6}\nloglik {:.4}  AIC {:.4}  p_u {}\n",
        fit.spec.degree,
        fit.spec.interior_knots.len(),
        fit.beta,
        fit.sigma,
        fit.rho,
        fit.loglik,
        fit.aic,
        fit.p_u
    )
}

fn run_fit(cli: &Cli, a: &FitArgs) -> CliResult<()> {
    let controls = a.beta.controls();
    controls.validate()?;
    if a.degree == 0 {
        return Err(invalid(anyhow!("--degree must be at least 1")));
    }
    let (data, stresses) = load_data(&a.data)?;
    let policy = match &a.knot_locations {
        Some(knots) => {
            // Warped times never exceed raw times for beta >= 0.
            let hi = data
                .levels()
                .iter()
                .flat_map(|l| l.cells.iter().map(|c| c.time))
                .fold(0.0, f64::max);
            let mut knots = knots.clone();
            knots.sort_by(f64::total_cmp);
            KnotPolicy::Fixed {
                spec: SplineSpec::new(a.degree, knots, [0.0, hi])?,
            }
        }
        None => KnotPolicy::Adaptive {
            degree: a.degree,
            n_interior: a.knots,
        },
    };
    let fit = profile_fit(&data, &stresses, &policy, &controls)?;
    let summary = fit_summary(&fit);
    emit(cli, "fit", None, &a.out, fit, || summary)
}

fn run_select(cli: &Cli, a: &SelectArgs) -> CliResult<()> {
    let controls = SelectionControls {
        degrees: a.degrees.clone(),
        n_min: a.n_min,
        n_max: a.n_max,
        fit: a.beta.controls(),
    };
    controls.fit.validate()?;
    if a.n_min > a.n_max || a.degrees.iter().any(|&q| q == 0) {
        return Err(invalid(anyhow!(
            "need --n-min <= --n-max and degrees of at least 1"
        )));
    }
    let (data, stresses) = load_data(&a.data)?;
    let report = select_spec(&data, &stresses, &controls)?;
    let summary = format!(
        "{} candidates\n{}",
        report.candidates.len(),
        fit_summary(&report.winner_fit)
    );
    emit(cli, "select-knots", None, &a.out, report, || summary)
}

fn run_bootstrap(cli: &Cli, a: &BootstrapArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    if a.replicates == 0 {
        return Err(invalid(anyhow!("-B must be at least 1")));
    }
    let controls = a.beta.controls();
    controls.validate()?;
    let fit = read_fit(&a.fit)?;
    let (data, _) = load_data(&a.data)?;
    if fit.n != data.n() {
        return Err(invalid(anyhow!(
            "fit has {} readings but {} has {}",
            fit.n,
            a.data.input.display(),
            data.n()
        )));
    }
    let options = BootstrapOptions {
        replicates: a.replicates,
        seed: a.seed,
        alpha: a.alpha,
        controls,
        mttf_temp: a.mttf.temp,
        mttf_threshold: a.mttf.threshold(),
        path_times: Vec::new(),
    };
    let result = resample_and_refit(&fit, &data, &options)?;
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        result.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
    }
    let mut summary = format!(
        "{} replicates ({} failed), alpha {}\n",
        result.replicates, result.failures, result.alpha
    );
    for iv in &result.intervals {
        summary.push_str(&format!(
            "{:<6} {:>12.6}  quantile [{:.6}, {:.6}]  bias-corrected [{:.6}, {:.6}]\n",
            iv.name,
            iv.estimate,
            iv.quantile.lower,
            iv.quantile.upper,
            iv.bias_corrected.lower,
            iv.bias_corrected.upper
        ));
    }
    emit(cli, "bootstrap", Some(a.seed), &a.out, result, || summary)
}

#[derive(Serialize)]
struct MttfReport {
    temp_use: f64,
    #[serde(rename = "D_f")]
    d_f: f64,
    #[serde(rename = "y_M")]
    y_m: f64,
    m_f: f64,
    time_unit: String,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    bias_corrected_lower: Option<f64>,
    bias_corrected_upper: Option<f64>,
    bootstrap_used: usize,
}

fn run_mttf(cli: &Cli, a: &MttfArgs) -> CliResult<()> {
    check_alpha(a.alpha)?;
    if !a.temp.is_finite() || !a.threshold.is_finite() {
        return Err(invalid(anyhow!("--temp and --threshold must be finite")));
    }
    let fit = read_fit(&a.fit)?;
    let threshold = if a.relative {
        Threshold::Relative(a.threshold)
    } else {
        Threshold::Absolute(a.threshold)
    };
    let est = mttf(&fit, a.temp, threshold)?;
    let mut report = MttfReport {
        temp_use: est.temp_use,
        d_f: est.d_f,
        y_m: est.y_m,
        m_f: est.m_f,
        time_unit: fit.time_unit.clone(),
        ci_lower: None,
        ci_upper: None,
        bias_corrected_lower: None,
        bias_corrected_upper: None,
        bootstrap_used: 0,
    };
    let mut seed = None;
    if let Some(path) = &a.bootstrap {
        let boot: BootstrapResult = read_result(path)?;
        seed = Some(boot.seed);
        // Each replicate keeps the frozen spec, so only beta and gamma change;
        // relative thresholds follow each replicate's initial level.
        let values: Vec<f64> = boot
            .samples
            .iter()
            .filter_map(|s| {
                let mut f = fit.clone();
                f.beta = s.beta;
                f.gamma = s.gamma.clone();
                mttf(&f, a.temp, threshold).ok().map(|e| e.m_f)
            })
            .collect();
        if values.len() >= 2 {
            let q = quantile_ci(&values, a.alpha)?;
            let bc = bias_corrected_ci(&values, est.m_f, a.alpha)?;
            report.ci_lower = Some(q.lower);
            report.ci_upper = Some(q.upper);
            report.bias_corrected_lower = Some(bc.lower);
            report.bias_corrected_upper = Some(bc.upper);
        } else {
            log::warn!("fewer than two bootstrap replicates reach the threshold");
        }
        report.bootstrap_used = values.len();
    }
    let summary = format!(
        "MTTF at {} C: {:.6} {} (D_f {:.6}, y_M {:.6})\n",
        report.temp_use, report.m_f, report.time_unit, report.d_f, report.y_m
    );
    emit(cli, "mttf", seed, &a.out, report, || summary)
}

#[derive(Serialize)]
struct SimulationReport {
    study: &'static str,
    datasets: usize,
    scenario: SimulationScenario,
    metrics: addt_core::StudyMetrics,
}

fn run_simulate(cli: &Cli, a: &SimulateArgs) -> CliResult<()> {
    let mut scenario = SimulationScenario::from_json(open(&a.scenario)?)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(b) = a.bootstrap {
        scenario.bootstrap = b;
    }
    scenario.validate()?;
    let datasets = a.datasets.unwrap_or_else(|| scenario.datasets(a.full));
    if datasets == 0 {
        return Err(invalid(anyhow!("--datasets must be at least 1")));
    }
    let (study, metrics) = match scenario.truth {
        Truth::Spline { .. } => ("recovery", run_recovery_study(&scenario, datasets)?),
        Truth::Parametric { .. } => ("misspecification", run_misspec_study(&scenario, datasets)?),
    };
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(invalid)?;
        let mut buf = Vec::new();
        metrics.write_pointwise_csv(&mut buf)?;
        write_atomic(&dir.join("pointwise.csv"), &buf)?;
        buf.clear();
        metrics.write_coverage_csv(&mut buf)?;
        write_atomic(&dir.join("coverage.csv"), &buf)?;
    }
    let mut summary = format!(
        "{study} study `{}`: {datasets} datasets, {} failed\n",
        scenario.name, metrics.failures
    );
    for p in &metrics.parameters {
        summary.push_str(&format!(
            "{:<10} truth {:>9.5}  mean {:>9.5}  bias {:>+10.6}  sd {:>9.6}  mse {:.3e}\n",
            p.name, p.truth, p.mean, p.bias, p.sd, p.mse
        ));
    }
    for c in &metrics.coverage {
        summary.push_str(&format!(
            "{:<10} coverage quantile {:.3}  bias-corrected {:.3}\n",
            c.name, c.quantile, c.bias_corrected
        ));
    }
    for m in &metrics.imse {
        summary.push_str(&format!(
            "{:<15} IBias {:.4}  RIVar {:.4}  RIMSE {:.4}\n",
            m.model, m.ibias, m.rivar, m.rimse
        ));
    }
    for m in &metrics.mttf {
        summary.push_str(&format!(
            "{:<24} MTTF mean {:.2}  bias {:+.2}  sd {:.2}  rmse {:.2}\n",
            m.model, m.mean, m.bias, m.sd, m.rmse
        ));
    }
    let seed = scenario.seed;
    let report = SimulationReport {
        study,
        datasets,
        scenario,
        metrics,
    };
    emit(cli, "simulate", Some(seed), &a.out, report, || summary)
}
