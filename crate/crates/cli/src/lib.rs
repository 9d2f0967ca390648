//! Command-line front end: ties the chain, attacker and analysis modules
//! into reproducible end-to-end experiments and emits auditable reports.
//!
//! Exit codes: 0 success, 1 script rejected, 2 configuration or input
//! error, 3 violated run invariant (the invariant is named on stderr).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod simulate;

pub use config::{ConfigError, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SCRIPT_REJECT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// A named internal consistency check failed after a run started.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("script rejected: {0}")]
    ScriptReject(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::ScriptReject(_) => EXIT_SCRIPT_REJECT,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "bfsim",
    version,
    about = "Desk-scale simulator for brute-force attacks on hash-addressed wallets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fund a chain, run the key search, steal, then freeze via evidence.
    Simulate(CommonArgs),
    /// Evaluate collision-probability bounds and optional enumerations.
    Analyze(AnalyzeArgs),
    /// Run a lock script against a witness and print the stack trace.
    Script(ScriptArgs),
    /// Derive a secret key and address from the configured seed.
    Keygen(CommonArgs),
    /// Replay a serialized chain file and print the final state.
    ChainDump(ChainDumpArgs),
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// key=value config file with [section] headers.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Secret-key width in bits; overrides the config file.
    #[arg(long)]
    pub bsec: Option<u32>,
    /// Address width in bits; overrides the config file.
    #[arg(long)]
    pub baddr: Option<u32>,
    /// Directory for reports and chain files (default: ./bfsim-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Enumerate the full keyspace for the exact collision probability
    /// (requires b_sec small enough to enumerate).
    #[arg(long)]
    pub exact: bool,
    /// Run this many Monte Carlo attack trials.
    #[arg(long, value_name = "N")]
    pub mc_trials: Option<u64>,
}

#[derive(Args)]
pub struct ScriptArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Lock script, in text form.
    pub script: PathBuf,
    /// Witness script (pushes only), in text form.
    pub witness: PathBuf,
}

#[derive(Args)]
pub struct ChainDumpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Chain file written by a simulate run.
    pub chain: PathBuf,
}

/// Applies command-line overrides on top of the config file (or defaults).
pub fn load_config(common: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(b) = common.bsec {
        cfg.b_sec = b;
    }
    if let Some(b) = common.baddr {
        cfg.b_addr = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn out_dir(common: &CommonArgs) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("bfsim-out"))
}

/// Runs one parsed command; the caller turns the error into an exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => simulate::cmd_simulate(&args),
        Command::Analyze(args) => commands::cmd_analyze(&args),
        Command::Script(args) => commands::cmd_script(&args),
        Command::Keygen(args) => commands::cmd_keygen(&args),
        Command::ChainDump(args) => commands::cmd_chain_dump(&args),
    }
}
