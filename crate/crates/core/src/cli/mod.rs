//! Batch driver: TOML configuration, the offline/online pipeline and the
//! `dnnrto` command line.

mod config;
mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Method, OutputConfig, ProblemSection, RunConfig, SamplerConfig, SurrogateConfig};
pub use run::{config_hash, diagnose, generate_data, prepare, run_experiment, run_in_memory, DiagnoseReport, RunOutcome};

/// Pipeline stage a runtime failure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Data,
    Offline,
    Online,
    Output,
    Diagnose,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Data => "data",
            Phase::Offline => "offline",
            Phase::Online => "online",
            Phase::Output => "output",
            Phase::Diagnose => "diagnose",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("[{phase}] {source}")]
    Runtime {
        phase: Phase,
        #[source]
        source: crate::Error,
    },
}

impl CliError {
    pub fn runtime(phase: Phase, source: crate::Error) -> Self {
        CliError::Runtime { phase, source }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dnnrto", version, about = "RTO-MH sampling with optional neural surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise observations and record the true parameters.
    GenerateData { config: PathBuf },
    /// Run the configured sampler and write all artefacts.
    Run { config: PathBuf },
    /// ESS of a sample file and REM/REC against a reference sample file.
    Diagnose { samples: PathBuf, reference: PathBuf },
}

fn with_threads<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("sampler.threads: {e}")))?;
    Ok(pool.install(job))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateData { config } => {
            let cfg = RunConfig::load(&config)?;
            let data = with_threads(cfg.sampler.threads, || generate_data(&cfg))??;
            println!(
                "wrote {} observations (noise std {:.4e}) to {}",
                data.data.len(),
                data.noise_std,
                cfg.output.directory.display()
            );
        }
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = with_threads(cfg.sampler.threads, || run_experiment(&cfg))??;
            println!(
                "{}: acceptance {:.3}, offline {:.2} s, online {:.2} s, output in {}",
                out.method.name(),
                out.chain.acceptance_probability,
                out.seconds_offline,
                out.seconds_online,
                cfg.output.directory.display()
            );
        }
        Command::Diagnose { samples, reference } => {
            let r = diagnose(&samples, &reference)?;
            println!("samples = {}", r.samples);
            println!("min_ess = {:.2}", r.ess.min);
            println!("med_ess = {:.2}", r.ess.median);
            println!("max_ess = {:.2}", r.ess.max);
            println!("rem = {:.6e}", r.errors.rem);
            println!("rec = {:.6e}", r.errors.rec);
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the verb and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
