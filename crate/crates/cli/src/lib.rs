//! `siv` command line: config loading, flag overrides, subcommand dispatch.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use siv_core::integrator::NoiseMode;
use siv_core::{Error, Result};

use config::RunConfig;
use output::{OutDir, Provenance};

#[derive(Debug, Parser)]
#[command(name = "siv", version, about = "Regime-switching stochastic SIV model: simulation, control, learning, diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample state and regime paths
    Simulate,
    /// Forward-backward sweep for the optimal control
    Control,
    /// Off-policy integral reinforcement learning
    Irl,
    /// Densities and invariant-measure audit
    Measure,
    /// Stationary distribution and moment-exponent spectra of the chain
    Spectral,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config; omitted fields take the reference defaults
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    pub paths: Option<usize>,
    /// worker thread cap for the ensemble runner
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "X", allow_negative_numbers = true)]
    pub dt: Option<f64>,
    #[arg(long = "t-final", global = true, value_name = "X", allow_negative_numbers = true)]
    pub t_final: Option<f64>,
    #[arg(long = "grid-n", global = true, value_name = "N")]
    pub grid_n: Option<usize>,
    /// one Gaussian draw per cell and step for all four noises
    #[arg(long = "shared-zeta", global = true)]
    pub shared_zeta: bool,
}

/// Effective config: file (or defaults), then flag overrides, validated.
pub fn effective_config(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::invalid(format!("config: cannot read {}: {e}", p.display())))?;
            config::parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = flags.seed {
        cfg.stepping.seed = s;
    }
    if let Some(n) = flags.paths {
        cfg.stepping.n_paths = n;
    }
    if let Some(dt) = flags.dt {
        cfg.stepping.dt = dt;
    }
    if let Some(t) = flags.t_final {
        cfg.stepping.t_final = t;
    }
    if let Some(n) = flags.grid_n {
        cfg.grid.n_cells = n;
    }
    if flags.shared_zeta {
        cfg.stepping.noise = NoiseMode::SharedZeta;
    }
    if let Some(o) = &flags.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct Outcome {
    pub summary: serde_json::Value,
    pub stdout: String,
    pub written: Vec<PathBuf>,
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let prov = Provenance { config_hash: cfg.hash(), seed: cfg.stepping.seed };
    let mut out = OutDir::create(std::path::Path::new(&cfg.output_dir))?;
    let (summary, stdout) = match command {
        Command::Simulate => (commands::simulate(cfg, &prov, &mut out)?, None),
        Command::Control => (commands::control(cfg, &prov, &mut out)?, None),
        Command::Irl => (commands::irl(cfg, &prov, &mut out)?, None),
        Command::Measure => (commands::measure(cfg, &prov, &mut out)?, None),
        Command::Spectral => {
            let (s, text) = commands::spectral(cfg, &prov, &mut out)?;
            (s, Some(text))
        }
    };
    let stdout = stdout.unwrap_or_else(|| {
        let files: Vec<String> = out.written().iter().map(|p| p.display().to_string()).collect();
        let mut s = serde_json::to_string_pretty(&json!({ "summary": summary, "files": files })).unwrap();
        s.push('\n');
        s
    });
    Ok(Outcome { summary, stdout, written: out.written().to_vec() })
}

pub fn error_json(e: &Error) -> serde_json::Value {
    let details: Vec<String> = match e {
        Error::Validation(m) => m.clone(),
        Error::RankDeficient { directions } => directions.clone(),
        _ => Vec::new(),
    };
    json!({ "error": { "kind": e.kind(), "message": e.to_string(), "details": details } })
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = effective_config(&cli.flags)?;
    match cli.flags.threads {
        Some(0) => Err(Error::invalid("--threads: must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("--threads: {e}")))?
            .install(|| dispatch(cli.command, &cfg)),
        None => dispatch(cli.command, &cfg),
    }
}

/// Process entry point; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(o) => {
            let _ = std::io::stdout().write_all(o.stdout.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", error_json(&e));
            1
        }
    }
}
