//! Batch front-end: configuration, subcommands and deterministic output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use chkp_core::grid::NodeFamily;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "chkp", version, about = "Line solitary waves of Camassa-Holm and the CH-KP-I transverse branch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the line solitary wave and check its residuals.
    Soliton(RunArgs),
    /// Spectra of M, K, L and the block operator.
    Spectrum(RunArgs),
    /// Resolvent norms along the imaginary axis.
    Resolvent(RunArgs),
    /// Continue the transversely periodic branch in the amplitude.
    Branch(RunArgs),
    /// Run every check and write a single verdict report.
    Verify(RunArgs),
    /// Print the default configuration as JSON.
    PrintDefaults,
}

#[derive(Clone, Debug)]
pub struct NRange(pub Vec<i64>);

fn parse_n_range(s: &str) -> Result<NRange, String> {
    config::parse_n_range(s).map(NRange)
}

/// Flags override values read from `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Wave speed
    #[arg(long)]
    pub c: Option<f64>,
    /// Dispersion parameter; needs c > 2*kappa
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Domain half-length
    #[arg(long)]
    pub l_dom: Option<f64>,
    /// Nodes per half-line
    #[arg(long)]
    pub n: Option<usize>,
    /// spectral or uniform
    #[arg(long)]
    pub family: Option<NodeFamily>,
    /// Transverse modes kept on the branch
    #[arg(long)]
    pub n_y: Option<usize>,
    /// Amplitude step
    #[arg(long)]
    pub ds: Option<f64>,
    /// Final amplitude
    #[arg(long)]
    pub s_max: Option<f64>,
    /// Newton tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    /// Newton iteration cap per point
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// `a:b` (inclusive) or a comma-separated list.
    #[arg(long, value_parser = parse_n_range, allow_hyphen_values = true)]
    pub n_range: Option<NRange>,
    /// Output root
    #[arg(long, env = config::OUTPUT_ENV)]
    pub output_dir: Option<PathBuf>,
    /// Also run the dense block eigensolve
    #[arg(long)]
    pub brute_force: Option<bool>,
    /// Write fields every k-th branch point
    #[arg(long)]
    pub field_every: Option<usize>,
    /// Stations per transverse period in field tables
    #[arg(long)]
    pub y_samples: Option<usize>,
    /// Node stride in field tables
    #[arg(long)]
    pub x_stride: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        take!(c, kappa, l_dom, n, family, n_y, ds, s_max, tol, max_iter, output_dir, brute_force, field_every, y_samples, x_stride);
        if let Some(r) = &self.n_range {
            cfg.n_range = r.0.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run one subcommand and return its exit status.
pub fn run(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::PrintDefaults => {
            print!("{}", output::to_json(&RunConfig::default()));
            Ok(())
        }
        Command::Soliton(a) => a.resolve().and_then(|c| commands::cmd_soliton(&c)),
        Command::Spectrum(a) => a.resolve().and_then(|c| commands::cmd_spectrum(&c)),
        Command::Resolvent(a) => a.resolve().and_then(|c| commands::cmd_resolvent(&c)),
        Command::Branch(a) => a.resolve().and_then(|c| commands::cmd_branch(&c)),
        Command::Verify(a) => a.resolve().and_then(|c| commands::cmd_verify(&c)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
