use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bgs_core::problems::catalog;
use bgs_harness::config::Settings;
use bgs_harness::report::{emit_report, write_aggregate_csv, write_csv, write_json, write_trace};
use bgs_harness::{run_experiment, Format, HarnessError, Solver};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bgs", version, about = "Bundle-gradient-sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications of one solver on one problem.
    Run(RunArgs),
    /// Run problems 1-8 and print one averaged row per problem.
    Table(TableArgs),
    /// List the benchmark problems.
    List,
}

#[derive(Args, Default)]
struct Flags {
    /// Key = value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// bgs or gs
    #[arg(long)]
    solver: Option<Solver>,
    #[arg(long)]
    n: Option<usize>,
    /// Replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Seed of the first replication.
    #[arg(long)]
    seed: Option<u64>,
    /// Relative-error tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Sampled points per iteration.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Use forward differences with this step instead of exact gradients.
    #[arg(long)]
    fd_step: Option<f64>,
    /// Enable the differentiability checks.
    #[arg(long)]
    checks: bool,
    /// Report time_s = 0 so that repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    problem: Option<String>,
    #[command(flatten)]
    flags: Flags,
    /// Report file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    format: Option<Format>,
    /// Write per-step rows (seed,k,i,err,radius,kind) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write every QP instance into this directory.
    #[arg(long)]
    dump_qp: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    flags: Flags,
    /// Comma-separated problem names or numbers.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
    problems: Vec<String>,
}

impl Flags {
    fn settings(&self) -> Result<Settings, HarnessError> {
        let file = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let flags = Settings {
            solver: self.solver,
            n: self.n,
            reps: self.reps,
            seed: self.seed,
            tol: self.tol,
            m: self.m,
            eps0: self.eps0,
            mu: self.mu,
            alpha: self.alpha,
            gamma: self.gamma,
            beta: self.beta,
            theta: self.theta,
            sigma: self.sigma,
            fd_step: self.fd_step,
            checks: self.checks.then_some(true),
            timing: self.no_timing.then_some(false),
            ..Settings::default()
        };
        Ok(file.merge(flags))
    }
}

fn run(args: RunArgs) -> Result<bool, HarnessError> {
    let settings = args.flags.settings()?.merge(Settings {
        problem: args.problem,
        out: args.out,
        format: args.format,
        trace: args.trace,
        ..Settings::default()
    });
    let mut spec = settings.to_spec()?;
    spec.qp_dump = args.dump_qp;
    let outcome = run_experiment(&spec)?;
    let format = settings.format.unwrap_or_default();
    match &settings.out {
        Some(path) => emit_report(&outcome.reports, Some(&outcome.aggregate), format, path)?,
        None => {
            let stdout = io::stdout().lock();
            match format {
                Format::Csv => write_csv(&outcome.reports, stdout)?,
                Format::Json => write_json(&outcome.reports, Some(&outcome.aggregate), stdout)?,
            }
        }
    }
    if let Some(path) = &settings.trace {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        write_trace(&outcome.traces, outcome.f_star, BufWriter::new(file))?;
    }
    let a = &outcome.aggregate;
    eprintln!(
        "{} {} n={}: iters {}  g_eval {}  E_final {}  converged {}/{}{}",
        a.solver,
        a.problem,
        a.n,
        fmt_mean(a.iters, 1),
        fmt_mean(a.g_eval, 1),
        a.e_final.map_or("-".into(), |v| format!("{v:.3e}")),
        a.converged,
        a.runs - a.excluded,
        if a.excluded > 0 {
            format!("  ({} aborted runs excluded)", a.excluded)
        } else {
            String::new()
        }
    );
    Ok(outcome.all_completed())
}

fn fmt_mean(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |v| format!("{v:.digits$}"))
}

fn table(args: TableArgs) -> Result<bool, HarnessError> {
    let base = args.flags.settings()?;
    let base = Settings {
        n: base.n.or(Some(50)),
        ..base
    };
    let mut rows = Vec::new();
    let mut ok = true;
    for p in &args.problems {
        let spec = Settings {
            problem: Some(p.clone()),
            ..base.clone()
        }
        .to_spec()?;
        let outcome = run_experiment(&spec)?;
        ok &= outcome.all_completed();
        rows.push(outcome.aggregate);
    }
    write_aggregate_csv(&rows, io::stdout().lock())?;
    Ok(ok)
}

fn list() -> Result<bool, HarnessError> {
    let mut out = io::stdout().lock();
    let w = |e: io::Error| HarnessError::io("<stdout>", e);
    writeln!(out, "{:>3}  {:<14} {:>6}  f*", "#", "name", "n").map_err(w)?;
    for e in catalog() {
        let dim = e.fixed_dim.map_or("any".to_string(), |d| d.to_string());
        writeln!(out, "{:>3}  {:<14} {:>6}  {}", e.number, e.name, dim, e.f_star).map_err(w)?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Table(a) => table(a),
        Command::List => list(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        // A closed reader (`bgs list | head`) is not an error.
        Err(HarnessError::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
