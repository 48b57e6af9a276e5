//! `polarpath`: experiment runner for the polar path-integral library.
//!
//! Exit codes: 0 ok, 1 tolerance breach, 2 config error, 3 numeric error.

mod compare;
mod config;
mod experiments;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{ExperimentConfig, ExperimentId, GridSpec, OneOrMany, RawConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<polarpath::Error> for CliError {
    fn from(e: polarpath::Error) -> Self {
        use polarpath::Error as E;
        match e {
            E::InvalidParameter { .. } | E::Unsupported(_) | E::Format(_) => CliError::Config(e.to_string()),
            E::Domain(_) | E::Boundary(_) | E::NotPositiveDefinite(_) | E::IllConditioned { .. } | E::Numeric(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "polarpath", version, about = "Path integrals with local time scaling in plane polar coordinates")]
struct Cli {
    /// Worker threads (default: hardware parallelism).
    #[arg(long, global = true, env = "POLARPATH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment. Flags override fields of the JSON config, which override defaults.
    Run(RunArgs),
    /// Fieldwise differences between two outputs of the same schema.
    Compare {
        file_a: PathBuf,
        file_b: PathBuf,
        /// Largest admissible absolute difference.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
        /// Compare even when the config hashes differ.
        #[arg(long)]
        force: bool,
    },
    /// List the experiments `run` knows.
    ListExperiments,
}

#[derive(Args)]
struct RunArgs {
    experiment: Option<ExperimentId>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    chart: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    hbar: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mass: Option<f64>,
    /// Slice count, or a comma-separated list.
    #[arg(long = "N", value_delimiter = ',', allow_negative_numbers = true)]
    n: Option<Vec<i64>>,
    #[arg(long = "N-max", allow_negative_numbers = true)]
    n_max: Option<i64>,
    /// Slice step, or a comma-separated decreasing list.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eps: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    n_r: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    n_theta: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    r_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    r_max: Option<f64>,
    /// `unit` or `sqrt_g`.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pairs: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    l_max: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    m_max: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    tolerance: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Timestamp used in file names instead of the current UTC time.
    #[arg(long)]
    timestamp: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> RawConfig {
        let grid = (self.n_r.is_some() || self.n_theta.is_some() || self.r_min.is_some() || self.r_max.is_some())
            .then(|| GridSpec {
                n_r: self.n_r,
                n_theta: self.n_theta,
                r_min: self.r_min,
                r_max: self.r_max,
            });
        RawConfig {
            experiment: self.experiment,
            chart: self.chart.clone(),
            hbar: self.hbar,
            mass: self.mass,
            n: self.n.clone().map(OneOrMany::Many),
            n_max: self.n_max,
            eps: self.eps.clone().map(OneOrMany::Many),
            tau: self.tau,
            grid,
            alpha: self.alpha.clone(),
            seed: self.seed,
            pairs: self.pairs,
            l_max: self.l_max,
            m_max: self.m_max,
            tolerance: self.tolerance,
            output_dir: self.out.clone(),
        }
    }
}

fn software_version() -> String {
    format!("polarpath-cli {} (polarpath {})", env!("CARGO_PKG_VERSION"), polarpath::VERSION)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Runs an experiment and writes its files; `Ok(false)` means a tolerance breach.
fn run(args: &RunArgs) -> Result<bool, CliError> {
    let file = match &args.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    let cfg = ExperimentConfig::resolve(file.overlay(args.overrides()))?;
    let hash = cfg.hash();
    let outcome = experiments::run(&cfg, &hash)?;
    let stamp = args
        .timestamp
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string());
    if stamp.is_empty() || stamp.contains(['/', '\\']) {
        return Err(CliError::Config(format!("invalid `timestamp`: `{stamp}`")));
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    let stem = format!("{}_{stamp}", cfg.experiment);
    let report = json!({
        "experiment": cfg.experiment,
        "config_hash": hash,
        "software_version": software_version(),
        "config": cfg,
        "passed": outcome.breach.is_none(),
        "breach": outcome.breach,
        "results": outcome.results,
    });
    let mut files = Vec::new();
    let mut emit = |suffix: &str, bytes: &[u8]| -> Result<(), CliError> {
        let name = format!("{stem}{suffix}");
        write_file(&cfg.output_dir.join(&name), bytes)?;
        println!("{}", cfg.output_dir.join(&name).display());
        files.push(json!({"name": name, "sha256": sha256_hex(bytes)}));
        Ok(())
    };
    for a in &outcome.artifacts {
        emit(&a.suffix, &a.bytes)?;
    }
    let mut body = serde_json::to_vec_pretty(&report).expect("report serialises");
    body.push(b'\n');
    emit(".json", &body)?;
    let manifest = json!({
        "experiment": cfg.experiment,
        "config_hash": hash,
        "software_version": software_version(),
        "timestamp": stamp,
        "config": cfg,
        "files": files,
    });
    let mut body = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    body.push(b'\n');
    write_file(&cfg.output_dir.join(format!("{stem}.manifest.json")), &body)?;
    match &outcome.breach {
        Some(msg) => {
            eprintln!("tolerance breach: {msg}");
            Ok(false)
        }
        None => Ok(true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("config error: invalid `threads`: must be ≥ 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::ListExperiments => {
            for e in ExperimentId::ALL {
                println!("{:<20} {}", e.id(), e.summary());
            }
            Ok(true)
        }
        Command::Run(args) => run(args),
        Command::Compare {
            file_a,
            file_b,
            tolerance,
            force,
        } => compare::compare(file_a, file_b, *tolerance, *force).map(|rep| {
            println!("{}", serde_json::to_string_pretty(&rep).expect("report serialises"));
            rep.within_tolerance
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
