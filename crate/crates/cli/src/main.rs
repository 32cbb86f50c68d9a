use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use ieci::bench::{BenchmarkProblem, BENCHMARKS};
use ieci::config::{RunConfig, ThetaSetting};
use ieci::improvement::expected_improvement;
use ieci::optimizer::{incumbent, run_with, ConstraintMode, Problem};
use ieci::output::{write_design, write_progress, write_surface, TraceRow, TraceWriter};
use ieci::verify::{run_suite, Suite, VerifyOptions, ALL_SUITES};

#[derive(Parser)]
#[command(
    name = "ieci",
    version,
    about = "Constrained Bayesian optimization by integrated expected conditional improvement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer on a benchmark problem and write CSV artifacts.
    Run(RunArgs),
    /// Check the numerical kernels against independent reference computations.
    Verify(VerifyArgs),
    /// Print benchmark problem metadata.
    Describe {
        /// Problem to describe; all problems when omitted.
        problem: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with run settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    /// "map" or "sample:T".
    #[arg(long)]
    theta_mode: Option<ThetaSetting>,
    /// surrogate, known-indicator or none.
    #[arg(long)]
    constraint_mode: Option<ConstraintMode>,
    #[arg(long, env = "IECI_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite to run (repeatable); all suites when omitted.
    #[arg(long = "suite")]
    suites: Vec<Suite>,
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    seed: u64,
    /// Multiply the closed-form EI by this factor, to check that the
    /// harness notices.
    #[arg(long, hide = true)]
    tamper_ei: Option<f64>,
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Config(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
            Failure::Run(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Describe { problem } => cmd_describe(problem.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => f.report(),
    }
}

fn resolve_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let problem = args.problem.as_deref().context("either --problem or --config is required")?;
            RunConfig::for_problem(problem)
        }
    };
    if let Some(p) = &args.problem {
        cfg.problem = p.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_init {
        cfg.n_init = v;
    }
    if let Some(v) = args.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = args.candidates {
        cfg.candidates = v;
    }
    if let Some(v) = args.theta_mode {
        cfg.theta_mode = v;
    }
    if let Some(v) = args.constraint_mode {
        cfg.constraint_mode = v;
    }
    if args.output_dir.is_some() {
        cfg.output_dir = args.output_dir.clone();
    }
    cfg.validate()?;
    BenchmarkProblem::by_name(&cfg.problem, cfg.seed)?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    let cfg = resolve_config(&args).map_err(Failure::Config)?;
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    execute(&cfg, &out).map_err(Failure::Run)?;
    Ok(ExitCode::SUCCESS)
}

fn execute(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.emit()?)?;
    let mut problem = BenchmarkProblem::by_name(&cfg.problem, cfg.seed)?;
    let dim = problem.bounds().dim();
    let mut trace = TraceWriter::create(&out.join("trace.csv"), dim)?;
    info!("running {} with seed {} into {}", cfg.problem, cfg.seed, out.display());

    let (state, records) = run_with(&mut problem, &cfg.optimizer_config(), cfg.seed, |_, rec| {
        info!("round {} x={:?} log_reduction={:.3}", rec.round, rec.chosen_x, rec.expected_reduction_log);
        trace.write(&TraceRow::from(rec))
    })?;

    write_design(fs::File::create(out.join("design.csv"))?, state.design())?;
    write_progress(fs::File::create(out.join("progress.csv"))?, state.progress())?;
    let per_dim = if dim == 1 { 200 } else { 60 };
    write_surface(
        fs::File::create(out.join("surface.csv"))?,
        state.model(),
        state.constraint_model(),
        problem.bounds(),
        per_dim,
    )?;

    println!(
        "problem {} seed {}: {} evaluations, {} rounds",
        cfg.problem,
        cfg.seed,
        state.design().len(),
        records.len()
    );
    match incumbent(&state)? {
        Some(inc) => println!(
            "incumbent x = {:?}, posterior mean = {:.6}, feasibility = {:.4}",
            inc.x, inc.mean, inc.feasibility
        ),
        None => println!("no feasible point observed"),
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Failure> {
    let mut opts = VerifyOptions { seed: args.seed, ..VerifyOptions::default() };
    if let Some(k) = args.tamper_ei {
        opts.ei = Arc::new(move |m, s, f| k * expected_improvement(m, s, f));
    }
    let suites = if args.suites.is_empty() { ALL_SUITES.to_vec() } else { args.suites };
    let mut failed = Vec::new();
    for suite in suites {
        let report = run_suite(suite, &opts).map_err(|e| Failure::Run(e.into()))?;
        println!("{report}");
        if !report.passed {
            failed.push(suite.name());
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failing suites: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_describe(problem: Option<&str>) -> Result<ExitCode, Failure> {
    let names: Vec<&str> = match problem {
        Some(p) => vec![p],
        None => BENCHMARKS.to_vec(),
    };
    for name in names {
        let p = BenchmarkProblem::by_name(name, 0).map_err(|e| Failure::Config(e.into()))?;
        let b = p.bounds();
        println!("{}", p.name());
        println!("  {}", p.description());
        println!("  dimension {}, lower {:?}, upper {:?}", b.dim(), b.lower(), b.upper());
        println!("  noise sd {}", p.noise_sd());
        println!("  default initial design {}", RunConfig::for_problem(name).n_init);
        for o in p.known_optima() {
            println!("  constrained minimum {:?} -> {} ({})", o.x, o.value, o.provenance);
        }
    }
    Ok(ExitCode::SUCCESS)
}
