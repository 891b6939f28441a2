//! Batch front end over the torus construction library: problem files in,
//! machine-readable results out. Subcommands cover full runs, frequency
//! checks, resonance measure experiments, breakdown sweeps, and single
//! debug steps. Errors leave as structured JSON on stderr; exit codes are
//! 0 success, 1 usage or input error, 2 domain failure.

mod emit;
mod inputs;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use kam_core::engine::classical::setup_classical;
use kam_core::engine::{build_schedule, frequency_match, EngineError, TorusResult};
use kam_core::kamstep::{apply_step, StepError, StepOptions, StepParams};
use kam_core::series::NormalForm;
use kam_core::smalldiv::{
    check_diophantine, resonance_measure, DiophantineParams, FrequencyBox, SmallDivError,
};
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "kam",
    version,
    about = "Invariant torus construction for near-integrable Hamiltonians"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct a torus at a target frequency from a problem file
    Run(CommonArgs),
    /// Scan a frequency vector for small divisors
    CheckFreq(CommonArgs),
    /// Monte Carlo measure of the resonance zones in a frequency box
    Measure(CommonArgs),
    /// Locate the breakdown forcing strength across divisor thresholds
    Sweep(CommonArgs),
    /// Run a single normal-form step and dump the report
    Step(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// input problem file (JSON)
    #[arg(long)]
    input: PathBuf,
    /// write the JSON result here instead of stdout; tabular commands
    /// also write a sibling .csv next to it
    #[arg(long)]
    output: Option<PathBuf>,
    /// stdout format; csv is available for run, measure, and sweep
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Monte Carlo seed override (measure)
    #[arg(long)]
    seed: Option<u64>,
    /// cap on the number of stages (run, sweep)
    #[arg(long)]
    max_iters: Option<usize>,
    /// stop once the torus defect falls under this (run, sweep)
    #[arg(long)]
    tol: Option<f64>,
    /// keep going when step entry conditions fail; the report flags it
    #[arg(long)]
    force: bool,
    /// dotted-path override applied to the input file,
    /// e.g. --set schedule.alpha=0.05 or --set problem.epsilon=1e-6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: i32,
}

impl CliError {
    pub fn input(message: String) -> Self {
        CliError { code: "input", message, exit: 1 }
    }
}

fn classify_step(e: &StepError) -> (&'static str, i32) {
    match e {
        StepError::BadParams(_) => ("input", 1),
        StepError::ConditionViolation(_) => ("conditions", 2),
        StepError::LieDivergence { .. } => ("lie_divergence", 2),
        StepError::Homological(_) => ("homological", 2),
        StepError::Series(_) | StepError::Analysis(_) | StepError::SmallDiv(_) => ("input", 1),
    }
}

impl From<StepError> for CliError {
    fn from(e: StepError) -> Self {
        let (code, exit) = classify_step(&e);
        CliError { code, exit, message: e.to_string() }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let (code, exit) = match &e {
            EngineError::BadInput(_) => ("input", 1),
            EngineError::ScheduleInfeasible { .. } => ("schedule", 1),
            EngineError::Series(_) | EngineError::SmallDiv(_) => ("input", 1),
            EngineError::Step(s) => classify_step(s),
            EngineError::PreconditionViolated { .. } => ("precondition", 2),
            EngineError::NoConvergence { .. } | EngineError::OuterNoConvergence { .. } => {
                ("non_convergence", 2)
            }
            EngineError::NewtonFail(_) => ("newton", 2),
            EngineError::SpectralAliasing { .. } => ("aliasing", 2),
        };
        CliError { code, exit, message: e.to_string() }
    }
}

impl From<SmallDivError> for CliError {
    fn from(e: SmallDivError) -> Self {
        CliError::input(e.to_string())
    }
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error(&CliError { code: "usage", message: e.to_string(), exit: 1 });
            return 1;
        }
    };
    let result = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::CheckFreq(a) => cmd_check_freq(a),
        Cmd::Measure(a) => cmd_measure(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Step(a) => cmd_step(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            report_error(&e);
            e.exit
        }
    }
}

fn report_error(e: &CliError) {
    let doc = json!({ "error": { "code": e.code, "message": e.message } });
    eprint!("{}", emit::to_json(&doc));
}

/// JSON goes to --output or stdout; the CSV table, when there is one,
/// goes to a sibling file or to stdout under --format csv.
fn deliver(a: &CommonArgs, doc: &Value, csv: Option<String>) -> Result<(), CliError> {
    let text = emit::to_json(doc);
    match &a.output {
        Some(path) => {
            write_file(path, &text)?;
            if let Some(table) = csv {
                write_file(&csv_sibling(path), &table)?;
            }
        }
        None => match a.format {
            Format::Json => print!("{text}"),
            Format::Csv => match csv {
                Some(table) => print!("{table}"),
                None => {
                    return Err(CliError::input(
                        "csv output is only available for run, measure, and sweep".into(),
                    ))
                }
            },
        },
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError {
        code: "io",
        message: format!("cannot write {}: {e}", path.display()),
        exit: 1,
    })
}

fn csv_sibling(path: &Path) -> PathBuf {
    let sib = path.with_extension("csv");
    if sib == path {
        path.with_extension("history.csv")
    } else {
        sib
    }
}

fn history_csv(res: &TorusResult) -> String {
    let header = [
        "j",
        "eps_in",
        "eps_out",
        "weighted_e",
        "residual_in",
        "residual_out",
        "min_divisor",
        "shift_norm",
        "conditions_ok",
        "forced",
    ];
    let rows: Vec<Vec<Value>> = res
        .history
        .iter()
        .map(|r| {
            vec![
                json!(r.j),
                json!(r.eps_in),
                json!(r.eps_out),
                json!(r.weighted_e),
                json!(r.residual_in),
                json!(r.residual_out),
                json!(r.min_divisor),
                json!(r.shift_norm),
                json!(r.conditions_ok),
                json!(r.forced),
            ]
        })
        .collect();
    emit::to_csv(&header, &rows)
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError {
        code: "io",
        message: format!("cannot encode result: {e}"),
        exit: 1,
    })
}

fn cmd_run(a: &CommonArgs) -> Result<i32, CliError> {
    let mut input: inputs::RunInput = inputs::load(&a.input, &a.set)?;
    let omega_star = input.omega_star.clone().ok_or_else(|| {
        CliError::input("missing field omega_star: run targets a fixed rotation frequency".into())
    })?;
    if omega_star.len() != input.problem.n {
        return Err(CliError::input(format!(
            "omega_star has {} entries but the problem has n = {}",
            omega_star.len(),
            input.problem.n
        )));
    }
    if let Some(m) = a.max_iters {
        input.schedule.max_iters = Some(m);
    }
    if let Some(t) = a.tol {
        input.config.residual_stop = t;
    }
    if a.force {
        input.config.force = true;
    }
    let (_, _, r_auto) = setup_classical(&input.problem, &omega_star)?;
    let sp = input.schedule.resolve(input.problem.n, r_auto)?;
    let sched = build_schedule(&sp)?;
    let prob = &input.problem;
    let family = |w: &[f64]| setup_classical(prob, w).map(|(n0, p0, _)| (n0, p0));
    let (matched_start, res) = frequency_match(family, &omega_star, &sched, &input.config)?;

    let mut doc = Map::new();
    doc.insert("omega_star".into(), to_value(&omega_star)?);
    doc.insert("matched_start".into(), to_value(&matched_start)?);
    doc.insert("result".into(), to_value(&res)?);
    deliver(a, &Value::Object(doc), Some(history_csv(&res)))?;
    Ok(0)
}

fn cmd_check_freq(a: &CommonArgs) -> Result<i32, CliError> {
    let input: inputs::CheckFreqInput = inputs::load(&a.input, &a.set)?;
    if input.k_max == 0 {
        return Err(CliError::input("k_max must be at least 1".into()));
    }
    let params = DiophantineParams::new(input.omega.len(), input.alpha, input.tau)?;
    let report = check_diophantine(&input.omega, &params, input.k_max);
    deliver(a, &to_value(&report)?, None)?;
    Ok(if report.ok { 0 } else { 2 })
}

fn worker_count() -> usize {
    if let Ok(raw) = std::env::var("KAM_THREADS") {
        if let Ok(k) = raw.parse::<usize>() {
            return k.max(1);
        }
    }
    std::thread::available_parallelism().map(|k| k.get()).unwrap_or(1).min(8)
}

fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

fn cmd_measure(a: &CommonArgs) -> Result<i32, CliError> {
    let mut input: inputs::MeasureInput = inputs::load(&a.input, &a.set)?;
    if let Some(seed) = a.seed {
        input.seed = seed;
    }
    if input.n_samples < 1000 {
        return Err(CliError::input(format!(
            "n_samples = {} is too small for a usable stderr; need at least 1000",
            input.n_samples
        )));
    }
    if input.alphas.is_empty() {
        return Err(CliError::input("alphas must be nonempty".into()));
    }
    if input.alphas.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(CliError::input("every alpha must be positive and finite".into()));
    }
    if input.k_max == 0 {
        return Err(CliError::input("k_max must be at least 1".into()));
    }
    let fbox = FrequencyBox::new(input.fbox.lo.clone(), input.fbox.hi.clone())?;
    let n = input.fbox.lo.len();
    let workers = worker_count();

    let mut rows = Vec::new();
    let mut fit = Vec::new();
    for &alpha in &input.alphas {
        let params = DiophantineParams::new(n, alpha, input.tau)?;
        let est =
            resonance_measure(&fbox, &params, input.k_max, input.n_samples, input.seed, workers);
        if est.estimate > 0.0 {
            fit.push((alpha.ln(), est.estimate.ln()));
        }
        rows.push((alpha, est));
    }
    let slope = if input.alphas.len() >= 2 { log_slope(&fit) } else { None };

    let row_values: Vec<Value> = rows
        .iter()
        .map(|(alpha, est)| {
            json!({
                "alpha": alpha,
                "estimate": est.estimate,
                "stderr": est.stderr,
                "hits": est.hits,
                "n_samples": est.n_samples,
            })
        })
        .collect();
    let mut doc = Map::new();
    doc.insert("rows".into(), Value::Array(row_values));
    doc.insert("seed".into(), json!(input.seed));
    if let Some(s) = slope {
        doc.insert("slope".into(), json!(s));
    }
    let csv_rows: Vec<Vec<Value>> = rows
        .iter()
        .map(|(alpha, est)| {
            vec![
                json!(alpha),
                json!(est.estimate),
                json!(est.stderr),
                json!(est.hits),
                json!(est.n_samples),
            ]
        })
        .collect();
    let csv = emit::to_csv(&["alpha", "estimate", "stderr", "hits", "n_samples"], &csv_rows);
    deliver(a, &Value::Object(doc), Some(csv))?;
    Ok(0)
}

fn cmd_sweep(a: &CommonArgs) -> Result<i32, CliError> {
    let mut input: inputs::SweepInput = inputs::load(&a.input, &a.set)?;
    if let Some(m) = a.max_iters {
        input.schedule.max_iters = Some(m);
    }
    if let Some(t) = a.tol {
        input.config.residual_stop = t;
    }
    if a.force {
        input.config.force = true;
    }
    // the sweep fixes r0 per trial from the forcing strength
    let sp = input.schedule.resolve(input.problem.n, 0.1)?;
    let table = kam_core::engine::classical::sweep(
        &input.problem,
        &input.omega,
        &input.alphas,
        &input.eps_grid,
        &sp,
        &input.config,
    )?;
    let csv_rows: Vec<Vec<Value>> = table
        .rows
        .iter()
        .map(|r| vec![json!(r.alpha), json!(r.eps_max), json!(r.threshold)])
        .collect();
    let csv = emit::to_csv(&["alpha", "eps_max", "threshold"], &csv_rows);
    deliver(a, &to_value(&table)?, Some(csv))?;
    Ok(0)
}

fn cmd_step(a: &CommonArgs) -> Result<i32, CliError> {
    let input: inputs::StepInput = inputs::load(&a.input, &a.set)?;
    let n = input.omega.len();
    if input.p.dim() != n {
        return Err(CliError::input(format!(
            "perturbation dimension {} does not match omega length {n}",
            input.p.dim()
        )));
    }
    let pi = &input.params;
    let params = StepParams::new(pi.r, pi.s, pi.h, pi.sigma, pi.eta, pi.k_cut, pi.alpha, pi.tau)?
        .with_constants(pi.c_a, pi.c_b, pi.divisor_factor)?;
    let opts = StepOptions { force: a.force, ..StepOptions::default() };
    let nf = NormalForm::new(input.e, input.omega.clone());
    let (n_out, p_out, record, report) = apply_step(&nf, &input.p, &params, &opts)?;

    let mut doc = Map::new();
    doc.insert("report".into(), to_value(&report)?);
    doc.insert("normal_form".into(), json!({ "e": n_out.e, "omega": n_out.omega }));
    if input.emit_series {
        doc.insert("p_out".into(), to_value(&p_out)?);
        doc.insert("f_gen".into(), to_value(&record.f_gen)?);
    }
    deliver(a, &Value::Object(doc), None)?;
    Ok(0)
}
