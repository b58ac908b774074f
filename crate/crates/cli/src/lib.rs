//! Command-line front end: configuration, run modes, manifests and reruns.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{validate_config, Diagnostics, RunConfig};
pub use manifest::Manifest;

/// Failure classes with their exit codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CliError {
    /// Bad or inconsistent configuration (exit 2).
    Config(String),
    /// Solver failure: no convergence, LP breakdown, divergence (exit 3).
    Solver(String),
    /// Input data rejected (exit 4).
    Validation(String),
    /// I/O and anything else (exit 1).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Solver(m) | CliError::Validation(m) | CliError::Io(m) => m,
        }
    }

    /// One-line JSON form printed on failure.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.message() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<ppr_cert::Error> for CliError {
    fn from(e: ppr_cert::Error) -> Self {
        use ppr_cert::Error as E;
        let m = e.to_string();
        match e {
            E::NotConverged { .. }
            | E::IterationCap { .. }
            | E::EnumerationCap(_)
            | E::LpNumerical(_)
            | E::LpStatus { .. }
            | E::DegenerateFit(_)
            | E::Diverged { .. } => CliError::Solver(m),
            E::Io(_) => CliError::Io(m),
            _ => CliError::Validation(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "ppr-cert", version, about = "Robustness certificates for PageRank-based node classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline selected by the `mode` key.
    Run {
        /// TOML config file.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Do not list the written files.
        #[arg(short, long)]
        quiet: bool,
        /// Config overrides: `key=value`, `--key=value` or `--key value`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Joins `--key value` pairs into `key=value`.
fn normalize_overrides(raw: &[String]) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(item) = it.next() {
        let item = item.trim_start_matches("--");
        if item.contains('=') {
            out.push(item.to_string());
        } else if let Some(value) = it.next() {
            out.push(format!("{item}={value}"));
        } else {
            return Err(CliError::Config(format!("override `{item}` has no value")));
        }
    }
    Ok(out)
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let overrides = normalize_overrides(overrides)?;
    match path {
        Some(p) => RunConfig::load(p, &overrides),
        None => RunConfig::parse("", &overrides),
    }
}

/// Size of the worker pool: `CERT_THREADS` when set, else the rayon default.
fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var("CERT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("CERT_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(pool.install(f))
}

/// Validates, runs and writes outputs plus `manifest.json`.
pub fn execute(config: &RunConfig) -> Result<Manifest, CliError> {
    let diagnostics = config::check(config);
    for w in &diagnostics.warnings {
        log::warn!("{w}");
    }
    if let Some(e) = diagnostics.errors.first() {
        return Err(CliError::Config(e.clone()));
    }
    let files = with_pool(|| pipeline::execute(config))??;
    let out = &config.paths.output;
    fs::create_dir_all(out)?;
    for (name, body) in &files {
        fs::write(out.join(name), body)?;
    }
    let manifest = Manifest::new(config, &files)?;
    fs::write(out.join(manifest::MANIFEST_FILE), manifest.to_json())?;
    Ok(manifest)
}

/// Reruns the config stored in a manifest after checking its input hashes.
pub fn rerun(manifest_path: &Path, output: Option<&Path>) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest = Manifest::parse(&text)?;
    manifest.verify_inputs()?;
    let mut config = RunConfig::parse(&manifest.config, &[])?;
    if let Some(dir) = output {
        config.paths.output = dir.to_path_buf();
    }
    execute(&config)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, quiet, overrides } => {
            let config = load_config(config.as_deref(), &overrides)?;
            let manifest = execute(&config)?;
            if !quiet {
                for f in &manifest.outputs {
                    println!("{}", config.paths.output.join(&f.file).display());
                }
            }
            Ok(())
        }
        Command::Validate { config, overrides } => {
            let overrides = normalize_overrides(&overrides)?;
            let d = validate_config(&config, &overrides)?;
            print!("{}", d.render());
            if d.is_ok() {
                println!("ok");
                Ok(())
            } else {
                Err(CliError::Config(format!("{} error(s) in {}", d.errors.len(), config.display())))
            }
        }
        Command::Rerun { manifest, output } => {
            let m = rerun(&manifest, output.as_deref())?;
            println!("reran {} producing {} files", m.mode, m.outputs.len());
            Ok(())
        }
    }
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
