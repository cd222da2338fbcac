//! Subcommand drivers. Each writes its CSV artifacts into an output
//! directory and maps its result onto the exit-code contract:
//! 0 success, 1 configuration or input error, 2 not converged or
//! qualification failed, 3 CFL violation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ccs_core::chain::{validate_cfl, Discretization};
use ccs_core::dp::{forward_distribution, solve_value_table};
use ccs_core::dual::{ascend, certify, estimate_cost_bound, AscentParams, Certificate, DualBox, DualSolution};
use ccs_core::export::{self, fmt_f64};
use ccs_core::lq::analytic_maximizer;
use ccs_core::mc::{simulate, terminal_functional, SimConfig};
use ccs_core::model::{DualPoint, ProblemSpec};
use ccs_core::qualify::{check_qualification, QualificationReport, QualifyParams};
use ccs_core::rate::{fit_loglog, LogLogFit};
use ccs_core::Error;
use rayon::prelude::*;

use crate::config::{RunConfig, Setting};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    NotConverged(String),
    QualificationFailed(String),
    Cfl(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Failure(_) => 1,
            CliError::NotConverged(_) | CliError::QualificationFailed(_) => 2,
            CliError::Cfl(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::NotConverged(m) => write!(f, "not converged: {m}"),
            CliError::QualificationFailed(m) => write!(f, "qualification failed: {m}"),
            CliError::Cfl(m) => write!(f, "CFL failure: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::CflViolation { .. } => CliError::Cfl(e.to_string()),
            Error::InvalidInput(_) | Error::PathDependentConstraint { .. } | Error::UnknownExample(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn csv_writer(dir: &Path, name: &str) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(create(dir, name)?))
}

fn write_echo(config: &RunConfig, dir: &Path) -> CliResult<()> {
    let resolved = config.resolved().map_err(CliError::Config)?;
    let mut f = create(dir, "config.resolved.toml")?;
    f.write_all(resolved.to_toml().as_bytes())?;
    f.flush()?;
    Ok(())
}

fn setup(config: &RunConfig, h: f64) -> CliResult<(ProblemSpec, Discretization)> {
    let spec = config.spec().map_err(CliError::Config)?;
    let disc = config.discretization_for(&spec, h).map_err(CliError::Config)?;
    Ok((spec, disc))
}

fn check_cfl(spec: &ProblemSpec, disc: &Discretization) -> CliResult<()> {
    match validate_cfl(spec, disc).violation {
        Some(e) => Err(CliError::Cfl(e.to_string())),
        None => Ok(()),
    }
}

fn qualify_params(config: &RunConfig) -> QualifyParams {
    QualifyParams {
        step_rule: config.qualify.step_rule,
        max_iters: config.qualify.max_iters,
        tol: config.qualify.tol,
    }
}

/// Everything `solve` produces at one time step.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub h: f64,
    pub steps: usize,
    pub dx: f64,
    pub m_bound: f64,
    pub dual_box: DualBox,
    pub qualification: Option<QualificationReport>,
    pub solution: DualSolution,
    pub certificate: Certificate,
}

impl SolveResult {
    pub fn lambda(&self) -> &[f64] {
        self.solution.lambda_star.as_slice()
    }

    pub fn certified(&self) -> bool {
        self.solution.converged && self.certificate.passed()
    }
}

/// CFL check, qualification when `eps = "auto"`, ascent and certificate.
pub fn solve_at(config: &RunConfig, h: f64) -> CliResult<SolveResult> {
    let (spec, disc) = setup(config, h)?;
    check_cfl(&spec, &disc)?;
    let m_bound = match config.dual.m_bound {
        Setting::Value(m) => m,
        Setting::Auto => estimate_cost_bound(&spec, &disc),
    };
    let (eps, qualification) = match config.dual.eps {
        Setting::Value(e) => (e, None),
        Setting::Auto => {
            let report = check_qualification(&spec, &disc, config.qualify.target_eps, &qualify_params(config))?;
            if !report.passed {
                return Err(CliError::QualificationFailed(format!(
                    "margin {} does not exceed {} at h = {h}",
                    report.margin, config.qualify.target_eps
                )));
            }
            (report.margin, Some(report))
        }
    };
    let dual_box = DualBox::from_margin(m_bound, eps)?;
    let params = AscentParams {
        step_rule: config.dual.step_rule,
        grad_tol: config.dual.grad_tol,
        kink_tol: config.dual.kink_tol,
        max_iters: config.dual.max_iters,
    };
    let solution = ascend(&spec, &disc, &dual_box, &params)?;
    let certificate = certify(
        &spec,
        &disc,
        &solution.lambda_star,
        &solution.evaluation.policy,
        config.dual.certify_tol,
    )?;
    Ok(SolveResult {
        h,
        steps: disc.steps,
        dx: disc.dx,
        m_bound,
        dual_box,
        qualification,
        solution,
        certificate,
    })
}

fn write_solution(dir: &Path, r: &SolveResult) -> CliResult<()> {
    let mut w = csv_writer(dir, "solution.csv")?;
    w.write_record(["quantity", "value"])?;
    let mut row = |k: String, v: String| w.write_record([k, v]);
    row("h".into(), fmt_f64(r.h))?;
    row("steps".into(), r.steps.to_string())?;
    row("dx".into(), fmt_f64(r.dx))?;
    for (i, l) in r.lambda().iter().enumerate() {
        row(format!("lambda_{i}"), fmt_f64(*l))?;
    }
    row("d_h".into(), fmt_f64(r.solution.value))?;
    row("iterations".into(), r.solution.trace.len().to_string())?;
    row("converged".into(), r.solution.converged.to_string())?;
    row("m_bound".into(), fmt_f64(r.m_bound))?;
    row("eps".into(), fmt_f64(r.dual_box.eps))?;
    row("box_radius".into(), fmt_f64(r.dual_box.radius()))?;
    let c = &r.certificate;
    for (i, g) in c.feasibility.iter().enumerate() {
        row(format!("residual_{i}"), fmt_f64(*g))?;
    }
    row("policy_cost".into(), fmt_f64(c.policy_cost))?;
    row("complementarity_gap".into(), fmt_f64(c.complementarity_gap))?;
    row("stationarity_gap".into(), fmt_f64(c.stationarity_gap))?;
    row("certified".into(), c.passed().to_string())?;
    w.flush()?;
    Ok(())
}

fn write_trace_file(dir: &Path, r: &SolveResult) -> CliResult<()> {
    export::write_trace(create(dir, "trace.csv")?, &r.solution.trace)?;
    Ok(())
}

fn write_tables(config: &RunConfig, dir: &Path, r: &SolveResult) -> CliResult<()> {
    if !(config.outputs.value_table || config.outputs.distribution) {
        return Ok(());
    }
    let (spec, disc) = setup(config, r.h)?;
    if config.outputs.value_table {
        let (table, _) = solve_value_table(&spec, &disc, &r.solution.lambda_star)?;
        export::write_value_table(create(dir, "value.csv")?, &disc, &table)?;
    }
    if config.outputs.distribution {
        let dist = forward_distribution(&spec, &disc, &r.solution.evaluation.policy)?;
        export::write_distribution(create(dir, "distribution.csv")?, &disc, &dist)?;
    }
    Ok(())
}

/// `solve`: writes `solution.csv`, `trace.csv` and the requested tables.
pub fn cmd_solve(config: &RunConfig, dir: &Path) -> CliResult<SolveResult> {
    write_echo(config, dir)?;
    let r = solve_at(config, config.primary_h())?;
    write_solution(dir, &r)?;
    if config.outputs.trace {
        write_trace_file(dir, &r)?;
    }
    write_tables(config, dir, &r)?;
    if let Some(q) = &r.qualification {
        export::write_qualification(create(dir, "qualification.csv")?, q)?;
    }
    if !r.solution.converged {
        return Err(CliError::NotConverged(format!(
            "ascent stopped after {} iterations with residual {}",
            r.solution.trace.len(),
            r.solution.trace.last().map_or(f64::NAN, |t| t.residual)
        )));
    }
    if !r.certificate.passed() {
        return Err(CliError::NotConverged(format!("certificate failed: {:?}", r.certificate)));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub h: f64,
    pub steps: usize,
    pub value: f64,
    pub value_error: f64,
    pub lambda: Vec<f64>,
    /// `‖λ_h − λ_ref‖_∞`.
    pub lambda_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateStudyResult {
    pub rows: Vec<RateRow>,
    pub value_fit: Option<LogLogFit>,
    pub lambda_fit: Option<LogLogFit>,
}

fn references(config: &RunConfig) -> CliResult<(f64, Vec<f64>)> {
    let analytic = config.example_id().map(analytic_maximizer).transpose()?;
    let v = config.rate.v_ref.or(analytic.map(|a| a.1));
    let l = config.rate.lambda_ref.clone().or(analytic.map(|a| vec![a.0]));
    match (v, l) {
        (Some(v), Some(l)) => Ok((v, l)),
        _ => Err(CliError::Config("rate study needs rate.v_ref and rate.lambda_ref for custom problems".into())),
    }
}

/// `rate-study`: one solve per time step, run in parallel; writes
/// `rate.csv`, `rate_fit.csv` and one `.dat` file per error series.
pub fn cmd_rate_study(config: &RunConfig, dir: &Path, full_range: bool) -> CliResult<RateStudyResult> {
    write_echo(config, dir)?;
    let (v_ref, l_ref) = references(config)?;
    let h_list = config.study_h_list(full_range);
    let solved: Vec<CliResult<SolveResult>> = h_list.par_iter().map(|&h| solve_at(config, h)).collect();
    let mut rows = Vec::new();
    for (h, r) in h_list.iter().zip(solved) {
        let r = r.map_err(|e| match e {
            CliError::Cfl(m) => CliError::Cfl(format!("h = {h}: {m}")),
            CliError::Config(m) => CliError::Config(format!("h = {h}: {m}")),
            CliError::NotConverged(m) => CliError::NotConverged(format!("h = {h}: {m}")),
            CliError::QualificationFailed(m) => CliError::QualificationFailed(format!("h = {h}: {m}")),
            CliError::Failure(m) => CliError::Failure(format!("h = {h}: {m}")),
        })?;
        let lambda_error = r
            .lambda()
            .iter()
            .zip(&l_ref)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        rows.push(RateRow {
            h: *h,
            steps: r.steps,
            value: r.solution.value,
            value_error: (r.solution.value - v_ref).abs(),
            lambda: r.lambda().to_vec(),
            lambda_error,
            converged: r.solution.converged,
        });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let ve: Vec<f64> = rows.iter().map(|r| r.value_error).collect();
    let le: Vec<f64> = rows.iter().map(|r| r.lambda_error).collect();
    let result = RateStudyResult {
        value_fit: fit_loglog(&hs, &ve),
        lambda_fit: if l_ref.is_empty() { None } else { fit_loglog(&hs, &le) },
        rows,
    };
    write_rate(dir, &result)?;
    if let Some(bad) = result.rows.iter().find(|r| !r.converged) {
        return Err(CliError::NotConverged(format!("h = {}", bad.h)));
    }
    Ok(result)
}

fn write_rate(dir: &Path, result: &RateStudyResult) -> CliResult<()> {
    let dim = result.rows.first().map_or(0, |r| r.lambda.len());
    let mut w = csv_writer(dir, "rate.csv")?;
    let mut header: Vec<String> = ["h", "steps", "v_h", "v_error"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("lambda_{i}")));
    header.extend(["lambda_error", "converged"].map(String::from));
    w.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![fmt_f64(r.h), r.steps.to_string(), fmt_f64(r.value), fmt_f64(r.value_error)];
        rec.extend(r.lambda.iter().map(|&l| fmt_f64(l)));
        rec.push(fmt_f64(r.lambda_error));
        rec.push(r.converged.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "rate_fit.csv")?;
    w.write_record(["series", "slope", "intercept"])?;
    for (name, fit) in [("value_error", result.value_fit), ("lambda_error", result.lambda_fit)] {
        let (s, i) = fit.map_or(("absent".to_string(), "absent".to_string()), |f| {
            (fmt_f64(f.slope), fmt_f64(f.intercept))
        });
        w.write_record([name.to_string(), s, i])?;
    }
    w.flush()?;

    let series: [(&str, &str, fn(&RateRow) -> f64); 2] = [
        ("value_error.dat", "|V_h - V|", |r| r.value_error),
        ("lambda_error.dat", "|lambda_h - lambda*|", |r| r.lambda_error),
    ];
    for (file, label, get) in series {
        let mut f = create(dir, file)?;
        writeln!(f, "# h {label}  (plot with: set logscale xy)")?;
        for r in &result.rows {
            writeln!(f, "{} {}", fmt_f64(r.h), fmt_f64(get(r)))?;
        }
        f.flush()?;
    }
    Ok(())
}

/// `qualify`: writes `qualification.csv`; fails with exit 2 when the
/// margin does not exceed `qualify.target_eps`.
pub fn cmd_qualify(config: &RunConfig, dir: &Path) -> CliResult<QualificationReport> {
    write_echo(config, dir)?;
    let (spec, disc) = setup(config, config.primary_h())?;
    check_cfl(&spec, &disc)?;
    let report = check_qualification(&spec, &disc, config.qualify.target_eps, &qualify_params(config))?;
    export::write_qualification(create(dir, "qualification.csv")?, &report)?;
    if !report.passed {
        return Err(CliError::QualificationFailed(format!(
            "margin {} does not exceed {}",
            report.margin, report.target_eps
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRow {
    pub name: String,
    pub mean: f64,
    pub se: f64,
    pub exact: f64,
}

/// `simulate`: solves, then simulates the optimal policy and compares the
/// Monte-Carlo estimates of the cost and of each constraint with the exact
/// forward pass. Writes `simulation.csv` and, when requested, `paths.csv`.
pub fn cmd_simulate(config: &RunConfig, dir: &Path) -> CliResult<Vec<SimulationRow>> {
    write_echo(config, dir)?;
    let r = solve_at(config, config.primary_h())?;
    let (spec, disc) = setup(config, r.h)?;
    let policy = &r.solution.evaluation.policy;
    let functionals: Vec<_> = spec
        .constraints()
        .iter()
        .map(|c| {
            let map = c.terminal_map.clone().expect("grid problems have terminal maps");
            terminal_functional(move |x| map(x))
        })
        .collect();
    let sim_config = SimConfig {
        n_paths: config.simulate.n_paths,
        seed: config.simulate.seed,
        store_paths: config.simulate.store_paths,
    };
    let report = simulate(&spec, &disc, policy, &functionals, &sim_config)?;
    let outcome = ccs_core::dp::policy_outcome(&spec, &disc, policy)?;
    let mut rows = vec![SimulationRow {
        name: "cost".into(),
        mean: report.cost.mean,
        se: report.cost.se,
        exact: outcome.cost,
    }];
    for (i, (est, c)) in report.estimates.iter().zip(spec.constraints()).enumerate() {
        rows.push(SimulationRow {
            name: format!("psi_{i}"),
            mean: est.mean,
            se: est.se,
            exact: outcome.residuals[i] + c.target,
        });
    }
    let mut w = csv_writer(dir, "simulation.csv")?;
    w.write_record(["functional", "mean", "se", "ci_low", "ci_high", "exact", "z"])?;
    let estimates = std::iter::once(&report.cost).chain(&report.estimates);
    for (row, est) in rows.iter().zip(estimates) {
        let z = if row.se > 0.0 { (row.mean - row.exact) / row.se } else { 0.0 };
        w.write_record([
            row.name.clone(),
            fmt_f64(row.mean),
            fmt_f64(row.se),
            fmt_f64(est.ci_low),
            fmt_f64(est.ci_high),
            fmt_f64(row.exact),
            fmt_f64(z),
        ])?;
    }
    w.flush()?;
    if let Some(paths) = &report.paths {
        export::write_paths(create(dir, "paths.csv")?, &report.times, paths)?;
    }
    Ok(rows)
}

/// `certify`: checks feasibility, complementarity and stationarity at
/// `certify.lambda` (or at the ascent's multiplier) and writes
/// `certificate.csv`.
pub fn cmd_certify(config: &RunConfig, dir: &Path) -> CliResult<Certificate> {
    write_echo(config, dir)?;
    let h = config.primary_h();
    let (spec, disc) = setup(config, h)?;
    check_cfl(&spec, &disc)?;
    let lambda = match &config.certify.lambda {
        Some(l) => DualPoint::for_spec(&spec, l.clone())?,
        None => solve_at(config, h)?.solution.lambda_star,
    };
    let eval = ccs_core::dp::solve_inner(&spec, &disc, &lambda)?;
    let cert = certify(&spec, &disc, &lambda, &eval.policy, config.dual.certify_tol)?;
    let mut w = csv_writer(dir, "certificate.csv")?;
    w.write_record(["quantity", "value"])?;
    for (i, l) in lambda.as_slice().iter().enumerate() {
        w.write_record([format!("lambda_{i}"), fmt_f64(*l)])?;
    }
    for (i, g) in cert.feasibility.iter().enumerate() {
        w.write_record([format!("residual_{i}"), fmt_f64(*g)])?;
    }
    w.write_record(["complementarity_gap".to_string(), fmt_f64(cert.complementarity_gap)])?;
    w.write_record(["stationarity_gap".to_string(), fmt_f64(cert.stationarity_gap)])?;
    w.write_record(["feasibility_ok".to_string(), cert.feasibility_ok.to_string()])?;
    w.write_record(["complementarity_ok".to_string(), cert.complementarity_ok.to_string()])?;
    w.write_record(["stationarity_ok".to_string(), cert.stationarity_ok.to_string()])?;
    w.flush()?;
    if !cert.passed() {
        return Err(CliError::NotConverged(format!("certificate failed at lambda = {:?}", lambda.as_slice())));
    }
    Ok(cert)
}

/// Output directory: `--out` wins over `outputs.dir`.
pub fn output_dir(config: &RunConfig, cli_out: Option<&Path>) -> PathBuf {
    cli_out.map_or_else(|| PathBuf::from(&config.outputs.dir), Path::to_path_buf)
}
