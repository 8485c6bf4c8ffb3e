//! `ope`: analyze, simulate and verify TD / FQI / PFQI on linear policy-evaluation instances.
//!
//! Exit codes: 0 clean, 2 input error, 3 verification failure, 4 marginal-only outcome.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::SymmetricEigen;
use precond_ope::algorithms::{run, AlgorithmConfig, AlgorithmKind, RunOptions, RunStatus};
use precond_ope::analyzer::{analyze, transition_analysis, InstanceReport, Prediction, TransitionReport};
use precond_ope::harness::{generate, run_campaign, CampaignResult, GeneratorSpec, Regime, Theorem};
use precond_ope::matrix::Vector;
use precond_ope::mdp::{build_empirical, BatchDataset, InstanceFile};
use precond_ope::systems::Problem;
use precond_ope::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ope", version, about = "Convergence analysis for TD, FQI and PFQI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Source {
    /// Instance JSON (h, gamma, P, R, mu, Phi).
    instance: PathBuf,
    /// Batch of transitions; the model is then estimated from it, with Phi and
    /// gamma taken from the instance file.
    #[arg(long, requires = "n_actions")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    n_actions: Option<usize>,
    /// Replace the instance's discount factor.
    #[arg(long)]
    gamma_override: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Verdicts for TD, FQI and PFQI plus the structural facts behind them.
    Analyze {
        #[command(flatten)]
        source: Source,
        /// Learning rate for TD and PFQI; defaults to 1/λmax(Σcov).
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 10)]
        t: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Runs one algorithm and writes its trace as `<prefix>.json` and `<prefix>.csv`.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        algo: AlgorithmKind,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 10)]
        t: usize,
        /// Comma-separated initial parameters; zeros when absent.
        #[arg(long)]
        theta0: Option<String>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 1)]
        record_every: usize,
        /// Trace path prefix.
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Theorem-verification campaign over generated instances.
    Verify {
        /// Regimes to run; all of them when absent.
        #[arg(long)]
        regime: Vec<Regime>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Theorems to check; all of them when absent.
        #[arg(long)]
        theorem: Vec<Theorem>,
        #[arg(long, default_value_t = precond_ope::harness::DEFAULT_REWARD_DRAWS)]
        reward_draws: usize,
        /// Directory for failing-instance files.
        #[arg(long)]
        reproducers: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// PFQI convergence boundaries across α and t.
    Transitions {
        #[command(flatten)]
        source: Source,
        /// Comma-separated α grid; defaults to multiples of 1/λmax(Σcov).
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long, default_value = "1,2,4,8,16,32,64,128,256")]
        ts: String,
        #[command(flatten)]
        out: Output,
    },
    /// Writes generated instances as JSON files.
    Generate {
        #[arg(long)]
        regime: Regime,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Output directory.
        #[arg(long, short)]
        output: PathBuf,
    },
}

enum Failure {
    Input(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diagnostic(_) | Error::NoConvergence(_) => Failure::Verification(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

/// How a successful command ended.
#[derive(PartialEq, Eq)]
enum Outcome {
    Clean,
    Failed,
    MarginalOnly,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load(source: &Source) -> Result<Problem, Failure> {
    let text = read(&source.instance)?;
    let file = InstanceFile::from_json(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", source.instance.display())))?;
    let (mut mdp, features) = file
        .into_parts()
        .map_err(|e| Failure::Input(format!("{}: {e}", source.instance.display())))?;
    if let Some(g) = source.gamma_override {
        mdp = mdp.with_gamma(g)?;
    }
    match (&source.dataset, source.n_actions) {
        (Some(path), Some(n_actions)) => {
            let data = BatchDataset::from_json(&read(path)?, n_actions)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            Ok(Problem::from_empirical(build_empirical(&data, &features, mdp.gamma())?)?)
        }
        _ => Ok(Problem::new(mdp, features)?),
    }
}

fn default_alpha(p: &Problem) -> f64 {
    let top = SymmetricEigen::new(p.moments.sigma_cov.clone()).eigenvalues.max();
    if top > 0.0 {
        1.0 / top
    } else {
        1.0
    }
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Failure::Input(format!("--{flag}: cannot parse `{s}`"))))
        .collect()
}

fn emit(out: &Output, text: String) -> Result<(), Failure> {
    match &out.output {
        Some(path) => fs::write(path, text + "\n")?,
        None => {
            // A closed pipe (`ope ... | head`) is not an error worth reporting.
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = writeln!(stdout, "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn render<T: Serialize>(out: &Output, value: &T, text: impl FnOnce() -> String) -> Result<(), Failure> {
    let body = match out.format {
        Format::Json => precond_ope::json::to_string_pretty(value)?,
        Format::Text => text(),
    };
    emit(out, body)
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    alpha: f64,
    t: usize,
    summary: String,
    report: &'a InstanceReport,
}

fn cmd_analyze(source: &Source, alpha: Option<f64>, t: usize, out: &Output) -> Result<Outcome, Failure> {
    let p = load(source)?;
    let alpha = alpha.unwrap_or_else(|| default_alpha(&p));
    let r = analyze(&p, alpha, t)?;
    let summary = report::summary(&r);
    render(
        out,
        &AnalyzeOutput {
            alpha,
            t,
            summary: summary.clone(),
            report: &r,
        },
        || report::analyze_text(&r, alpha, t),
    )?;
    let marginal = [&r.td, &r.fqi, &r.pfqi].iter().any(|v| v.prediction == Prediction::Marginal);
    Ok(if marginal { Outcome::MarginalOnly } else { Outcome::Clean })
}

#[derive(Serialize)]
struct SimulateOutput {
    algorithm: AlgorithmKind,
    alpha: Option<f64>,
    t: Option<usize>,
    status: RunStatus,
    iterations: usize,
    last: Vec<f64>,
    limit: Option<Vec<f64>>,
    final_residual: f64,
    trace: Vec<TraceRow>,
}

#[derive(Serialize)]
struct TraceRow {
    iter: usize,
    theta: Vec<f64>,
    residual: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    source: &Source,
    algo: AlgorithmKind,
    alpha: Option<f64>,
    t: usize,
    theta0: Option<&str>,
    max_iters: Option<usize>,
    tol: f64,
    record_every: usize,
    trace_prefix: &Path,
    out: &Output,
) -> Result<Outcome, Failure> {
    let p = load(source)?;
    let d = p.d();
    let theta0 = match theta0 {
        Some(text) => Vector::from_vec(parse_list::<f64>("theta0", text)?),
        None => Vector::zeros(d),
    };
    let alpha = alpha.unwrap_or_else(|| default_alpha(&p));
    let config = match algo {
        AlgorithmKind::Td => AlgorithmConfig::td(alpha, theta0),
        AlgorithmKind::Fqi => AlgorithmConfig::fqi(theta0),
        AlgorithmKind::Pfqi => AlgorithmConfig::pfqi(alpha, t, theta0),
    };
    let opts = RunOptions {
        max_iters,
        tol,
        record_every,
        ..RunOptions::default()
    };
    let trace = run(&p.moments, p.gamma(), &config, &opts)?;
    let rows: Vec<TraceRow> = trace
        .iterates
        .iter()
        .zip(&trace.residuals)
        .map(|((k, theta), &residual)| TraceRow {
            iter: *k,
            theta: theta.iter().copied().collect(),
            residual,
        })
        .collect();
    let summary = SimulateOutput {
        algorithm: algo,
        alpha: (algo != AlgorithmKind::Fqi).then_some(alpha),
        t: (algo == AlgorithmKind::Pfqi).then_some(t),
        status: trace.status,
        iterations: trace.iterations,
        last: trace.last.iter().copied().collect(),
        limit: trace.limit.as_ref().map(|v| v.iter().copied().collect()),
        final_residual: trace.residuals.last().copied().unwrap_or(f64::NAN),
        trace: rows,
    };
    write_trace(trace_prefix, &summary, d)?;
    let head = SimulateOutputHead::from(&summary);
    render(out, &head, || report::simulate_text(&head))?;
    Ok(Outcome::Clean)
}

/// The stdout summary leaves the per-iterate rows to the trace files.
#[derive(Serialize)]
struct SimulateOutputHead<'a> {
    algorithm: AlgorithmKind,
    alpha: Option<f64>,
    t: Option<usize>,
    status: RunStatus,
    iterations: usize,
    last: &'a [f64],
    limit: Option<&'a [f64]>,
    final_residual: f64,
}

impl<'a> From<&'a SimulateOutput> for SimulateOutputHead<'a> {
    fn from(s: &'a SimulateOutput) -> Self {
        Self {
            algorithm: s.algorithm,
            alpha: s.alpha,
            t: s.t,
            status: s.status,
            iterations: s.iterations,
            last: &s.last,
            limit: s.limit.as_deref(),
            final_residual: s.final_residual,
        }
    }
}

fn write_trace(prefix: &Path, summary: &SimulateOutput, d: usize) -> Result<(), Failure> {
    if let Some(dir) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let json_path = prefix.with_extension("json");
    fs::write(&json_path, precond_ope::json::to_string_pretty(summary)? + "\n")?;
    let csv_path = prefix.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Failure::Input(e.to_string()))?;
    let mut header = vec!["iter".to_string()];
    header.extend((0..d).map(|i| format!("theta_{i}")));
    header.push("residual".into());
    w.write_record(&header).map_err(|e| Failure::Input(e.to_string()))?;
    for row in &summary.trace {
        let mut rec = vec![row.iter.to_string()];
        rec.extend(row.theta.iter().map(|x| format!("{}", precond_ope::json::sig12(*x))));
        rec.push(format!("{}", precond_ope::json::sig12(row.residual)));
        w.write_record(&rec).map_err(|e| Failure::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    regimes: &[Regime],
    count: usize,
    seed: u64,
    h: Option<usize>,
    d: Option<usize>,
    theorems: &[Theorem],
    reward_draws: usize,
    reproducers: Option<&Path>,
    out: &Output,
) -> Result<Outcome, Failure> {
    let regimes: Vec<Regime> = if regimes.is_empty() { Regime::ALL.to_vec() } else { regimes.to_vec() };
    let theorems: Vec<Theorem> = if theorems.is_empty() { Theorem::ALL.to_vec() } else { theorems.to_vec() };
    let specs: Vec<GeneratorSpec> = regimes
        .iter()
        .map(|&r| {
            let mut spec = GeneratorSpec::new(r, seed, count).with_dims(h, d);
            spec.reward_draws = reward_draws;
            spec
        })
        .collect();
    for spec in &specs {
        spec.check()?;
    }
    let result: CampaignResult = run_campaign(&specs, &theorems, reproducers)?;
    render(out, &result, || report::campaign_text(&result))?;
    let overall = result.overall();
    Ok(if overall.non_marginal_failures() > 0 {
        Outcome::Failed
    } else if overall.marginal + overall.inconclusive > 0 {
        Outcome::MarginalOnly
    } else {
        Outcome::Clean
    })
}

fn cmd_transitions(source: &Source, alphas: Option<&str>, ts: &str, out: &Output) -> Result<Outcome, Failure> {
    let p = load(source)?;
    let alphas = match alphas {
        Some(text) => parse_list::<f64>("alphas", text)?,
        None => {
            let base = default_alpha(&p);
            [0.05, 0.1, 0.25, 0.5, 1.0, 1.5].iter().map(|k| k * base).collect()
        }
    };
    let ts = parse_list::<usize>("ts", ts)?;
    let r: TransitionReport = transition_analysis(&p, &alphas, &ts)?;
    render(out, &r, || report::transitions_text(&r))?;
    Ok(if r.cross_checks.iter().all(|c| c.holds) { Outcome::Clean } else { Outcome::Failed })
}

fn cmd_generate(
    regime: Regime,
    count: usize,
    seed: u64,
    h: Option<usize>,
    d: Option<usize>,
    dir: &Path,
) -> Result<Outcome, Failure> {
    let spec = GeneratorSpec::new(regime, seed, count).with_dims(h, d);
    let instances = generate(&spec)?;
    fs::create_dir_all(dir)?;
    for inst in &instances {
        let path = dir.join(format!("{}-{}.json", regime, inst.seed));
        fs::write(&path, serde_json::to_string_pretty(&inst.file())? + "\n")?;
        println!("{}", path.display());
    }
    Ok(Outcome::Clean)
}

fn dispatch(cli: Cli) -> Result<Outcome, Failure> {
    match cli.command {
        Command::Analyze { source, alpha, t, out } => cmd_analyze(&source, alpha, t, &out),
        Command::Simulate {
            source,
            algo,
            alpha,
            t,
            theta0,
            max_iters,
            tol,
            record_every,
            trace,
            out,
        } => cmd_simulate(
            &source,
            algo,
            alpha,
            t,
            theta0.as_deref(),
            max_iters,
            tol,
            record_every,
            &trace,
            &out,
        ),
        Command::Verify {
            regime,
            count,
            seed,
            h,
            d,
            theorem,
            reward_draws,
            reproducers,
            out,
        } => cmd_verify(&regime, count, seed, h, d, &theorem, reward_draws, reproducers.as_deref(), &out),
        Command::Transitions { source, alphas, ts, out } => cmd_transitions(&source, alphas.as_deref(), &ts, &out),
        Command::Generate {
            regime,
            count,
            seed,
            h,
            d,
            output,
        } => cmd_generate(regime, count, seed, h, d, &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(3),
        Ok(Outcome::MarginalOnly) => ExitCode::from(4),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}
