use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nilspec::config::{ConfigError, RunConfig, Study};
use nilspec::report::{self, ReportError};
use nilspec::study::{self, StudyError};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

/// Macroscopic spectra, homogenized tensors and Carnot-Caratheodory
/// geometry of nilmanifolds.
#[derive(Debug, Parser)]
#[command(name = "nilspec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the cell problem and report the Albanese tensor.
    Albanese(Common),
    /// Rescaled-ball Dirichlet spectra and their 1/rho extrapolation.
    Spectrum(Common),
    /// Kohn spectrum on the Albanese Carnot-Caratheodory unit ball.
    Ccball(Common),
    /// Stable norm, ball containment and the minmax inequality.
    StableNorm(Common),
    /// Asymptotic volume and its Albanese lower bound.
    Asvol(Common),
    /// Run the acceptance suite.
    Verify(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration (optional for `verify`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent rho problems (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for every random sample (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

/// Configuration used by `verify` without `--config`.
const DEFAULT_VERIFY_CONFIG: &str = r#"{
    "algebra": "torus:2",
    "metric": {"kind": "left_invariant", "Q": [[1, 0], [0, 1]]}
}"#;

enum Failure {
    Config(ConfigError),
    Study(StudyError),
    Io(ReportError),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Study(_) | Failure::Io(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(e) => e.to_string(),
            Failure::Study(e) => format!("numerical failure: {e}"),
            Failure::Io(e) => e.to_string(),
        }
    }
}

fn split(command: Command) -> (Study, Common) {
    match command {
        Command::Albanese(c) => (Study::Albanese, c),
        Command::Spectrum(c) => (Study::Spectrum, c),
        Command::Ccball(c) => (Study::Ccball, c),
        Command::StableNorm(c) => (Study::StableNorm, c),
        Command::Asvol(c) => (Study::Asvol, c),
        Command::Verify(c) => (Study::Verify, c),
    }
}

fn write_log(dir: &Path, lines: &[String]) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
    report::write_file(&dir.join("run.log"), &(lines.join("\n") + "\n"))
}

fn run(study: Study, args: Common) -> Result<bool, Failure> {
    let started = Instant::now();
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path).map_err(Failure::Config)?,
        None if study == Study::Verify => RunConfig::from_json(DEFAULT_VERIFY_CONFIG).map_err(Failure::Config)?,
        None => return Err(Failure::Config(ConfigError::new("--config", "a configuration file is required"))),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Failure::Config(ConfigError::new("--threads", "must be at least 1")));
        }
    }
    let out = args.out.clone().or_else(|| config.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| "nilspec-out".into());
    let resolved = config.resolve(Some(study)).map_err(Failure::Config)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Study(StudyError::Numerical(format!("thread pool: {e}"))))?;
    let threads = pool.current_num_threads();
    let mut log = vec![
        format!("nilspec-cli {}", env!("CARGO_PKG_VERSION")),
        format!("platform {} {}", std::env::consts::OS, std::env::consts::ARCH),
        format!("config {}", args.config.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "(built-in)".into())),
        format!("output {}", out.display()),
        format!("threads {threads}"),
    ];
    match pool.install(|| study::run(&resolved)) {
        Ok(outcome) => {
            report::emit(&out, &outcome.report_json, &outcome.tables).map_err(Failure::Io)?;
            log.extend(outcome.log);
            log.push(format!("wall time {:.3} s", started.elapsed().as_secs_f64()));
            write_log(&out, &log).map_err(Failure::Io)?;
            Ok(!outcome.acceptance_failed)
        }
        Err(e) => {
            log.push(format!("error: {e}"));
            // The numerical failure is what gets reported; a log that cannot
            // be written is secondary.
            let _ = write_log(&out, &log);
            Err(Failure::Study(e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (study, args) = split(cli.command);
    match run(study, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("acceptance failure: see report.json");
            ExitCode::from(EXIT_ACCEPTANCE)
        }
        Err(f) => {
            eprintln!("{}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
