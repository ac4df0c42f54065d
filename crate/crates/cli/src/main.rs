use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use oilwater::engine::{run_to_fixation, BatchDraws, EngineKind, Policy, RunConfig, RunRecord};
use oilwater::experiments::{rightmost_particle_stats, run_sweep, variance_probe, SweepError, SweepPlan, Statistic};
use oilwater::io::{error_json, profile_csv, radial_profile_csv, run_record_json, scaling_profile_csv, sweep_csv, sweep_summary_json, RunManifest, SweepFits};
use oilwater::par;
use oilwater::render::{render_contours, render_occupation};
use oilwater::scaling::{ode_bvp_solve, radial_pde_solve};
use oilwater::stacks::StackMode;
use oilwater::verify::{run_suite, Suite, SuiteOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_ANOMALY: u8 = 3;

#[derive(Parser)]
#[command(name = "oilwater", version, about = "Two-species oil and water abelian network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one system to fixation and write `<out>.json` (plus `<out>.profile.csv` on the line).
    Run(RunArgs),
    /// Seed sweep over a grid of n; writes `<out>.csv` and `<out>.summary.json`.
    Sweep(SweepArgs),
    /// Solve the scaling-limit profile and write it as CSV.
    Ode(OdeArgs),
    /// Run a verification suite; exits 2 when any case fails.
    Verify(VerifyArgs),
    /// Run a planar system and write `<out>.occupation.ppm` and `<out>.contours.ppm`.
    Render(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Exact,
    Batched,
    BatchedStacks,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Exact => EngineKind::Exact,
            EngineArg::Batched => EngineKind::Batched(BatchDraws::Binomial),
            EngineArg::BatchedStacks => EngineKind::Batched(BatchDraws::StackSums),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    Merged,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Leftmost,
    Rightmost,
    UniformRandom,
    SweepParallel,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Leftmost => Policy::Leftmost,
            PolicyArg::Rightmost => Policy::Rightmost,
            PolicyArg::UniformRandom => Policy::UniformRandom,
            PolicyArg::SweepParallel => Policy::SweepParallel,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=3))]
    dim: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "leftmost")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "exact")]
    engine: EngineArg,
    #[arg(long, value_enum, default_value = "plain")]
    mode: ModeArg,
    /// Firing budget; defaults to 100 times the sanity bound.
    #[arg(long)]
    budget: Option<u64>,
    /// Output prefix.
    #[arg(long)]
    out: PathBuf,
    /// Test hook: flip the sign of this stack query.
    #[arg(long, hide = true)]
    inject_fault: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    n_grid: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=3))]
    dim: u64,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[arg(long, value_enum, default_value = "sweep-parallel")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "batched")]
    engine: EngineArg,
    /// Fit height and support exponents and add fluctuation summaries.
    #[arg(long)]
    fit: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OdeArgs {
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    mesh: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = parse_suite)]
    suite: Suite,
    #[arg(long, default_value_t = 50)]
    n_max: u64,
    /// Seeds per n (abelian), cases (least-action, identities) or walk trials.
    #[arg(long, default_value_t = 200)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: Option<u64>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).ok_or_else(|| {
        let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
        format!("unknown suite '{s}' (expected one of {})", names.join(", "))
    })
}

enum Failure {
    Usage(String),
    Verification,
    Anomaly(String),
    Io(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest(command: &str, seed: Option<u64>) -> RunManifest {
    RunManifest::new(command, std::env::args().skip(1).collect(), seed)
}

fn run_config(a: &RunArgs) -> RunConfig {
    let mut cfg = RunConfig::new(a.n, a.seed)
        .dim(a.dim as usize)
        .policy(a.policy.into())
        .engine(a.engine.into())
        .mode(match a.mode {
            ModeArg::Plain => StackMode::Plain,
            ModeArg::Merged => StackMode::Merged,
        });
    if let Some(b) = a.budget {
        cfg = cfg.budget(b);
    }
    cfg.inject_fault = a.inject_fault;
    cfg
}

fn simulate(a: &RunArgs, m: &RunManifest) -> Result<RunRecord, Failure> {
    run_to_fixation(&run_config(a)).map_err(|e| Failure::Anomaly(error_json(&e, m)))
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let m = manifest("run", Some(a.seed));
    let run = simulate(a, &m)?;
    fs::write(with_suffix(&a.out, ".json"), run_record_json(&run, m.clone()))?;
    if run.dim == 1 {
        fs::write(with_suffix(&a.out, ".profile.csv"), profile_csv(&run, &m))?;
    }
    eprintln!("n = {}, tau = {}, height = {}", run.n, run.tau, run.height());
    Ok(())
}

fn cmd_render(a: &RunArgs) -> Result<(), Failure> {
    if a.dim != 2 {
        return Err(Failure::Usage("render needs --dim 2".into()));
    }
    let m = manifest("render", Some(a.seed));
    let run = simulate(a, &m)?;
    let comment = m.comment();
    let occupation = render_occupation(&run).map_err(|e| Failure::Usage(e.to_string()))?;
    let contours = render_contours(&run).map_err(|e| Failure::Usage(e.to_string()))?;
    fs::write(with_suffix(&a.out, ".occupation.ppm"), occupation.encode(Some(&comment)))?;
    fs::write(with_suffix(&a.out, ".contours.ppm"), contours.encode(Some(&comment)))?;
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let mut plan = SweepPlan::new(a.n_grid.clone(), a.seeds);
    plan.base_seed = a.base_seed;
    plan.dim = a.dim as usize;
    plan.policy = a.policy.into();
    plan.engine = a.engine.into();
    plan.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let m = manifest("sweep", Some(a.base_seed));
    let result = run_sweep(&plan).map_err(|e| match e {
        SweepError::Engine { source, .. } => Failure::Anomaly(error_json(&source, &m)),
        other => Failure::Usage(other.to_string()),
    })?;
    let (fits, variance, rightmost) = if a.fit {
        let fits = SweepFits {
            height: result.fit(Statistic::Height).ok(),
            support_radius: result.fit(Statistic::SupportRadius).ok(),
        };
        if let Some(f) = &fits.height {
            eprintln!("height slope {:.4} +- {:.4}", f.slope, f.slope_stderr);
        }
        if let Some(f) = &fits.support_radius {
            eprintln!("support radius slope {:.4} +- {:.4}", f.slope, f.slope_stderr);
        }
        (Some(fits), Some(variance_probe(&result.summaries)), Some(rightmost_particle_stats(&result.summaries)))
    } else {
        (None, None, None)
    };
    fs::write(with_suffix(&a.out, ".csv"), sweep_csv(&result, &m))?;
    fs::write(
        with_suffix(&a.out, ".summary.json"),
        sweep_summary_json(&plan, &result, fits.as_ref(), variance.as_ref(), rightmost.as_ref(), &m),
    )?;
    Ok(())
}

fn cmd_ode(a: &OdeArgs) -> Result<(), Failure> {
    if !(a.mesh.is_finite() && a.mesh > 0.0) {
        return Err(Failure::Usage(format!("--mesh must be positive, got {}", a.mesh)));
    }
    let m = manifest("ode", None);
    let csv = match a.dim {
        1 => scaling_profile_csv(&ode_bvp_solve(a.mesh).map_err(|e| Failure::Anomaly(e.to_string()))?, &m),
        2..=4 => radial_profile_csv(&radial_pde_solve(a.dim, a.mesh).map_err(|e| Failure::Anomaly(e.to_string()))?, &m),
        d => return Err(Failure::Usage(format!("--dim must be 1 to 4, got {d}"))),
    };
    fs::write(&a.out, csv)?;
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), Failure> {
    if a.n_max == 0 || a.seeds == 0 {
        return Err(Failure::Usage("--n-max and --seeds must be positive".into()));
    }
    let mut opts = SuiteOptions::new(a.n_max, a.seeds);
    opts.base_seed = a.base_seed;
    opts.inject_fault = a.inject_fault;
    let report = run_suite(a.suite, &opts);
    let m = manifest("verify", Some(a.base_seed));
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "manifest": m,
        "passed": report.passed(),
        "report": report,
    }))
    .expect("report serializes");
    match &a.out {
        Some(p) => fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    eprintln!(
        "{}: {} cases, {} failures",
        a.suite.name(),
        report.cases,
        report.failures.len()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    par::configure_threads(par::threads_from_env());
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ode(a) => cmd_ode(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Render(a) => cmd_render(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Verification) => ExitCode::from(EXIT_VERIFY),
        Err(Failure::Anomaly(json)) => {
            println!("{}", json.trim_end());
            ExitCode::from(EXIT_ANOMALY)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ANOMALY)
        }
    }
}
