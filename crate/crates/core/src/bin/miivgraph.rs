//! Command-line front end: validate, identify, transform, simulate,
//! estimate and selfcheck.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use miivgraph::estimate::estimate_model;
use miivgraph::graph::{to_dot, DotOptions};
use miivgraph::identify::{identify_model, IdConfig, DEFAULT_ORACLE_BOUND};
use miivgraph::model::{equation_of, validate, ParamAssignment, SemModel};
use miivgraph::numeric::{sample_generic_params, simulate, Dataset, ErrorDistribution, DEFAULT_RANK_TOL};
use miivgraph::parser::{parse, Severity};
use miivgraph::report;
use miivgraph::selfcheck::{run_all, SelfcheckConfig};
use miivgraph::transform::partial_l2o;

#[derive(Parser)]
#[command(name = "miivgraph", version, about = "Identification and estimation for latent-variable path models")]
struct Cli {
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunConfig {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Random seed for parameter draws, simulation and selfcheck.
    #[arg(long, global = true, env = "MIIVGRAPH_SEED", default_value_t = 1)]
    seed: u64,
    /// Relative tolerance for numeric rank decisions.
    #[arg(long, global = true, default_value_t = DEFAULT_RANK_TOL, value_parser = positive_f64)]
    tol: f64,
    /// Most instrument sets reported per strategy.
    #[arg(long, global = true, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    max_sets: u64,
    /// Largest conditioning set tried for conditional instruments.
    #[arg(long, global = true, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    max_cond: u64,
    /// Emit the transformed diagram as DOT instead of JSON or text.
    #[arg(long, global = true)]
    emit_dot: bool,
    /// Draw every error node in DOT output.
    #[arg(long, global = true)]
    all_errors: bool,
    /// Largest graph the permutation oracle accepts in selfcheck.
    #[arg(long, global = true, default_value_t = DEFAULT_ORACLE_BOUND)]
    oracle_bound: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model file.
    Validate { model: PathBuf },
    /// Identification report for every equation.
    Identify { model: PathBuf },
    /// Latent-to-observed transform of one equation.
    Transform {
        model: PathBuf,
        /// Variable whose equation is transformed.
        #[arg(long)]
        equation: String,
        /// Covariates whose coefficients are targeted (default: all free ones).
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
        /// Latent covariates left in the error term.
        #[arg(long, value_delimiter = ',')]
        keep: Vec<String>,
    },
    /// Simulate observed data from the model.
    Simulate {
        model: PathBuf,
        /// Number of rows.
        #[arg(short, long)]
        n: usize,
        /// JSON object of parameter values; drawn from the seed when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write the parameter values used to this file.
        #[arg(long)]
        params_out: Option<PathBuf>,
        /// Use unit-variance uniform errors instead of Gaussian ones.
        #[arg(long)]
        uniform: bool,
        /// Output CSV (standard output when absent).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Two-stage least squares for every identified regression.
    Estimate { model: PathBuf, data: PathBuf },
    /// Run the randomized oracle suites.
    Selfcheck {
        /// Cases per suite.
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

enum Failure {
    /// Model or semantic error: exit 1.
    Model(String),
    /// I/O error: exit 2.
    Io(String),
}

type CmdResult = Result<(), Failure>;

fn model_err(e: impl std::fmt::Display) -> Failure {
    Failure::Model(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Io(e.to_string())),
    }
}

/// Reads model text or JSON; prints diagnostics to standard error.
fn load_model(path: &Path) -> Result<SemModel, Failure> {
    let text = read(path)?;
    let name = path.display();
    let model = if text.trim_start().starts_with('{') {
        SemModel::from_json_str(&text).map_err(|e| Failure::Model(format!("{name}: {e}")))?
    } else {
        let out = parse(&text);
        for d in &out.diagnostics {
            eprintln!("{name}:{d}");
        }
        match out.model {
            Some(m) if !out.diagnostics.iter().any(|d| d.severity == Severity::Error) => m,
            _ => return Err(Failure::Model(format!("{name}: model has errors"))),
        }
    };
    let violations = validate(&model);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{name}: {v}");
        }
        return Err(Failure::Model(format!("{name}: model is invalid")));
    }
    Ok(model)
}

fn print_json(value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(model_err)?;
    write_out(None, &(text + "\n"))
}

fn id_config(run: &RunConfig) -> IdConfig {
    IdConfig { max_sets: run.max_sets as usize, max_cond: run.max_cond as usize, rank_tol: run.tol, ..IdConfig::default() }
}

fn cmd_validate(run: &RunConfig, path: &Path) -> CmdResult {
    let m = load_model(path)?;
    let g = &m.diagram;
    let free: BTreeSet<&str> = g.params().into_iter().filter(|p| p.is_free()).map(|p| p.label.as_str()).collect();
    match run.format {
        Format::Json => print_json(&json!({
            "valid": true,
            "latent": g.names(m.latents()),
            "observed": g.names(m.observed()),
            "free_parameters": free.len(),
        })),
        Format::Text => write_out(
            None,
            &format!(
                "ok: {} latent, {} observed, {} free parameters\n",
                m.latents().len(),
                m.observed().len(),
                free.len()
            ),
        ),
    }
}

fn cmd_identify(run: &RunConfig, path: &Path) -> CmdResult {
    let m = load_model(path)?;
    let r = identify_model(&m, &id_config(run));
    match run.format {
        Format::Json => print_json(&r),
        Format::Text => write_out(None, &report::identification_text(&r)),
    }
}

fn cmd_transform(run: &RunConfig, path: &Path, equation: &str, targets: &[String], keep: &[String]) -> CmdResult {
    let m = load_model(path)?;
    let g = &m.diagram;
    let v = g.require(equation).map_err(model_err)?;
    let eq = equation_of(&m, v).map_err(model_err)?;
    let keep_set = keep.iter().map(|k| g.require(k)).collect::<Result<BTreeSet<_>, _>>().map_err(model_err)?;
    let eq = if targets.is_empty() {
        let t = eq.targets.iter().copied().filter(|t| !keep_set.contains(t)).collect();
        eq.with_targets(t)
    } else {
        let t = targets.iter().map(|t| g.require(t)).collect::<Result<Vec<_>, _>>().map_err(model_err)?;
        eq.with_targets(t)
    };
    let outcome = partial_l2o(&m, &eq, &keep_set).map_err(model_err)?;
    if run.emit_dot {
        let mut text = String::new();
        for line in report::transform_text(&m, &outcome).lines() {
            text.push_str("// ");
            text.push_str(line);
            text.push('\n');
        }
        text.push_str(&to_dot(&outcome.diagram, DotOptions { all_errors: run.all_errors }));
        return write_out(None, &text);
    }
    match run.format {
        Format::Text => write_out(None, &report::transform_text(&m, &outcome)),
        Format::Json => {
            let transformed = SemModel::new(outcome.diagram.clone(), m.scaling.clone());
            print_json(&json!({
                "equation": equation,
                "regression": {
                    "dependent": g.name(outcome.regression.dependent),
                    "regressors": g.names(outcome.regression.regressors.iter().copied()),
                },
                "composite_error": outcome.composite_error.iter()
                    .map(|(v, w)| json!({"node": g.name(*v), "weight": w.to_string()}))
                    .collect::<Vec<_>>(),
                "provenance": outcome.provenance.iter()
                    .map(|p| json!({
                        "regressor": g.name(p.source),
                        "param": p.param.label,
                        "combination": p.combination.to_string(),
                        "aliased": p.is_aliased(),
                    }))
                    .collect::<Vec<_>>(),
                "diagram": transformed.to_json(),
            }))
        }
    }
}

fn cmd_simulate(
    run: &RunConfig,
    path: &Path,
    n: usize,
    params: Option<&Path>,
    params_out: Option<&Path>,
    uniform: bool,
    out: Option<&Path>,
) -> CmdResult {
    let m = load_model(path)?;
    let p: ParamAssignment = match params {
        Some(file) => serde_json::from_str(&read(file)?).map_err(|e| Failure::Model(format!("{}: {e}", file.display())))?,
        None => sample_generic_params(&m, run.seed),
    };
    let dist = if uniform { ErrorDistribution::Uniform } else { ErrorDistribution::Gaussian };
    let data = simulate(&m, &p, n, run.seed, dist).map_err(model_err)?;
    if let Some(file) = params_out {
        let text = serde_json::to_string_pretty(&p).map_err(model_err)? + "\n";
        write_out(Some(file), &text)?;
    }
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(model_err)?;
    write_out(out, &String::from_utf8_lossy(&buf))
}

fn cmd_estimate(run: &RunConfig, path: &Path, data_path: &Path) -> CmdResult {
    let m = load_model(path)?;
    let file = fs::File::open(data_path).map_err(|e| Failure::Io(format!("{}: {e}", data_path.display())))?;
    let data = Dataset::read_csv(file).map_err(|e| Failure::Model(format!("{}: {e}", data_path.display())))?;
    for name in m.diagram.names(m.observed()) {
        if !data.columns.contains(&name) {
            return Err(Failure::Model(format!("{}: missing column `{name}`", data_path.display())));
        }
    }
    let id = identify_model(&m, &id_config(run));
    let est = estimate_model(&data, &id).map_err(model_err)?;
    match run.format {
        Format::Json => print_json(&est),
        Format::Text => write_out(None, &report::estimation_text(&est)),
    }
}

fn cmd_selfcheck(run: &RunConfig, cases: usize) -> CmdResult {
    let cfg = SelfcheckConfig { seed: run.seed, cases, oracle_bound: run.oracle_bound, rank_tol: run.tol };
    let results = run_all(&cfg);
    match run.format {
        Format::Json => print_json(&results)?,
        Format::Text => {
            let mut text = String::new();
            for r in &results {
                let verdict = if r.ok() { "PASS" } else { "FAIL" };
                text.push_str(&format!("{verdict} {} ({}/{})\n", r.name, r.passed, r.cases));
                for f in &r.failures {
                    text.push_str(&format!("  {f}\n"));
                }
            }
            write_out(None, &text)?;
        }
    }
    if results.iter().all(|r| r.ok()) {
        Ok(())
    } else {
        Err(Failure::Model("selfcheck found disagreements".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = &cli.run;
    let result = match &cli.command {
        Command::Validate { model } => cmd_validate(run, model),
        Command::Identify { model } => cmd_identify(run, model),
        Command::Transform { model, equation, targets, keep } => cmd_transform(run, model, equation, targets, keep),
        Command::Simulate { model, n, params, params_out, uniform, out } => {
            cmd_simulate(run, model, *n, params.as_deref(), params_out.as_deref(), *uniform, out.as_deref())
        }
        Command::Estimate { model, data } => cmd_estimate(run, model, data),
        Command::Selfcheck { cases } => cmd_selfcheck(run, *cases),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Model(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
