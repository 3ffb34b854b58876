mod grid;
mod manifest;

use std::error::Error as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ris_lab::channel::ScenarioConfig;
use ris_lab::codebook::{build_codebook, load_codebook, random_codebook, save_codebook, AoSettings, Scheme};
use ris_lab::channel::build_statistical_csi;
use ris_lab::experiments::{
    run_experiment, run_theory_verification, violates_bound, write_csv, ExperimentSpec, Proposition, ResultRow,
    SchemeKind, SweepAxis, TheoryGrid,
};
use ris_lab::Error;

use manifest::RunRecord;

const EXIT_VALIDATION: u8 = 2;
const EXIT_GENERATION: u8 = 3;
const EXIT_DIMENSION: u8 = 4;
const EXIT_ACCEPTANCE: u8 = 5;

#[derive(Parser)]
#[command(name = "ris-lab", version, about = "Environment-aware RIS codebooks: generation, simulation and theory checks")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a codebook offline from the statistical CSI of a scenario.
    GenCodebook(GenArgs),
    /// Run a Monte Carlo sweep and write one CSV row per value and scheme.
    Simulate(SimArgs),
    /// Compare simulated single-user received power to the closed forms.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Env,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct SeedArg {
    /// Master seed.
    #[arg(long, env = "RIS_LAB_SEED")]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: PathBuf,
    /// Number of codewords.
    #[arg(long)]
    q: usize,
    #[arg(long, value_enum)]
    scheme: SchemeArg,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: PathBuf,
    /// Precomputed codebooks; their scheme tags select the schemes unless
    /// --schemes is given.
    #[arg(long, num_args = 1..)]
    codebook: Vec<PathBuf>,
    /// Sweep axis: Q, N, P_d (dBm), T_c (slots) or F_r (dB).
    #[arg(long)]
    sweep: String,
    /// Comma-separated, strictly increasing sweep values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    trials: usize,
    #[arg(long, value_enum)]
    noise: Switch,
    /// Comma-separated subset of environment-aware, random-codebook,
    /// random-config, optimal-config.
    #[arg(long)]
    schemes: Option<String>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// 1 for perfect training, 2 for LS training error.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    prop: u8,
    #[arg(long)]
    config: PathBuf,
    /// JSON file, inline JSON object, or `N=64;F_r_db=-15,3,15;Q=1,2,4`.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    trials: usize,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

/// A failed run: exit code plus the error, if it is not already reported.
struct Failure {
    code: u8,
    error: Option<Error>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            error: Some(e),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DimensionMismatch { .. } => EXIT_DIMENSION,
        Error::SingularGram { .. } | Error::AllBlocksInvalid => EXIT_GENERATION,
        Error::Codeword { source, .. } | Error::Trial { source, .. } => match exit_code(source) {
            EXIT_DIMENSION => EXIT_DIMENSION,
            _ => EXIT_GENERATION,
        },
        _ => EXIT_VALIDATION,
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Error> {
    let cfg = ScenarioConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn gen_codebook(args: &GenArgs) -> Result<(), Failure> {
    let record = RunRecord::start(args.seed.seed);
    if args.q == 0 {
        return Err(Error::Config {
            key: "q".into(),
            reason: "--q must be at least 1".into(),
        }
        .into());
    }
    let mut cfg = load_config(&args.config)?;
    cfg.training_overhead = args.q;
    let cb = match args.scheme {
        SchemeArg::Env => build_codebook(&build_statistical_csi(&cfg), &cfg, args.seed.seed, &AoSettings::default())?,
        SchemeArg::Random => random_codebook(&cfg, args.seed.seed)?,
    };
    save_codebook(&cb, &args.out)?;
    record.finish(&cfg, &args.out, &[&args.out])?;
    println!("wrote {} codewords to {}", cb.len(), args.out.display());
    Ok(())
}

fn parse_list<T>(key: &str, text: &str, parse: impl Fn(&str) -> Result<T, Error>) -> Result<Vec<T>, Error> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config {
            key: key.into(),
            reason: "empty list".into(),
        });
    }
    items.into_iter().map(parse).collect()
}

fn simulate(args: &SimArgs) -> Result<(), Failure> {
    let record = RunRecord::start(args.seed.seed);
    let cfg = load_config(&args.config)?;
    let axis: SweepAxis = args.sweep.parse()?;
    let values = parse_list("values", &args.values, |s| {
        s.parse::<f64>().map_err(|_| Error::Config {
            key: "values".into(),
            reason: format!("{s:?} is not a number"),
        })
    })?;
    let codebooks = args
        .codebook
        .iter()
        .map(|p| load_codebook(p, None))
        .collect::<Result<Vec<_>, _>>()?;
    let schemes = match &args.schemes {
        Some(list) => parse_list("schemes", list, |s| s.parse())?,
        None if !codebooks.is_empty() => {
            let mut s: Vec<SchemeKind> = codebooks
                .iter()
                .map(|c| match c.scheme {
                    Scheme::EnvironmentAware => SchemeKind::EnvironmentAware,
                    Scheme::Random => SchemeKind::RandomCodebook,
                })
                .collect();
            s.dedup();
            s
        }
        None => vec![SchemeKind::EnvironmentAware, SchemeKind::RandomCodebook],
    };
    let mut scenario = cfg.clone();
    if axis != SweepAxis::Q {
        // Away from a Q sweep the loaded codebooks fix the codebook size.
        if let Some(q) = codebooks.iter().map(|c| c.len()).min() {
            scenario.training_overhead = q;
        }
    }
    let mut spec = ExperimentSpec::new(scenario, axis, values, schemes);
    spec.trials = args.trials;
    spec.noise_on = args.noise == Switch::On;
    spec.seed = args.seed.seed;
    spec.codebooks = codebooks;
    let rows = run_experiment(&spec)?;
    write_csv(&rows, &args.out)?;
    record.finish(&cfg, &args.out, &[&args.out])?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

struct Check {
    name: &'static str,
    passed: bool,
}

/// Acceptance checks that apply to one theory row.
fn row_checks(which: Proposition, row: &ResultRow, f_r_db: f64) -> Vec<Check> {
    let ratio = row.mean_power / row.theory_power.unwrap_or(f64::NAN);
    let mut checks = vec![Check {
        name: "bound",
        passed: !violates_bound(row),
    }];
    if which == Proposition::One && f_r_db >= 60.0 {
        checks.push(Check {
            name: "los-limit",
            passed: (0.98..=1.0).contains(&ratio),
        });
    } else if which == Proposition::One && f_r_db >= 15.0 {
        checks.push(Check {
            name: "tightness",
            passed: ratio >= 0.90,
        });
    }
    checks
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let record = RunRecord::start(args.seed.seed);
    let cfg = load_config(&args.config)?;
    let which = if args.prop == 1 { Proposition::One } else { Proposition::Two };
    let mut grid = TheoryGrid::new(cfg.clone());
    grid::parse_grid(&args.grid, &mut grid)?;
    grid.trials = args.trials;
    grid.seed = args.seed.seed;
    let rows = run_theory_verification(which, &grid)?;
    write_csv(&rows, &args.out)?;
    record.finish(&cfg, &args.out, &[&args.out])?;

    let mut failures = 0;
    let mut index = 0;
    for &n in &grid.n {
        for &f in &grid.f_r_db {
            let sigmas = if which == Proposition::One { 1 } else { grid.sigma_q2.len() };
            for _ in 0..sigmas * grid.q.len() {
                let row = &rows[index];
                index += 1;
                let ratio = row.mean_power / row.theory_power.unwrap_or(f64::NAN);
                for c in row_checks(which, row, f) {
                    failures += usize::from(!c.passed);
                    println!(
                        "{} {:<9} N={n} F_r_db={f} {}={} ratio={ratio:.4}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        row.sweep_param,
                        row.sweep_value,
                    );
                }
            }
        }
    }
    println!("verify prop {}: {} points, {failures} failed checks", args.prop, rows.len());
    if failures > 0 {
        return Err(Failure {
            code: EXIT_ACCEPTANCE,
            error: None,
        });
    }
    Ok(())
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut source = e.source();
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let result = match &cli.command {
        Command::GenCodebook(a) => gen_codebook(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(e) = &f.error {
                report(e);
            }
            ExitCode::from(f.code)
        }
    }
}
