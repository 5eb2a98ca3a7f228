use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hypodens_core::decomp::VConvention;
use hypodens_core::density::Centering;
use hypodens_core::paths::QpConvention;

use crate::config::{ExperimentConfig, ModelChoice};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "hypodens", version, about = "Small-time density experiments for hypoelliptic diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Directional-matrix diagnostics and anisotropic norms per δ.
    Norm {
        #[command(flatten)]
        run: RunArgs,
        /// Single δ, overriding the grid.
        #[arg(long)]
        delta: Option<f64>,
        /// Point whose `|y|_{A_δ}` is printed, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Option<Vec<f64>>,
    },
    /// Endpoint samples in scaled coordinates.
    Simulate(RunArgs),
    /// Key-decomposition residuals and remainder scaling.
    Decompose(RunArgs),
    /// Frequencies of the unit-horizon support events.
    Support(RunArgs),
    /// Quantiles of the smallest eigenvalue of the reduced Malliavin covariance.
    Covariance(RunArgs),
    /// Diagonal exponent, lower-bound and tail suites.
    Density(RunArgs),
    /// Full acceptance run.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Subset of criteria, e.g. `1,6,7`.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<String>>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Norm { .. } => "norm",
            Self::Simulate(_) => "simulate",
            Self::Decompose(_) => "decompose",
            Self::Support(_) => "support",
            Self::Covariance(_) => "covariance",
            Self::Density(_) => "density",
            Self::Verify { .. } => "verify",
        }
    }

    pub fn run_args(&self) -> &RunArgs {
        match self {
            Self::Norm { run, .. } | Self::Verify { run, .. } => run,
            Self::Simulate(run)
            | Self::Decompose(run)
            | Self::Support(run)
            | Self::Covariance(run)
            | Self::Density(run) => run,
        }
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in model name or path to a model TOML file.
    #[arg(long)]
    pub model: Option<String>,
    /// Starting point, comma separated (defaults to the origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Time horizons δ, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    /// Monte Carlo paths per δ.
    #[arg(long)]
    pub paths: Option<u64>,
    /// Fine steps per sub-interval.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Master seed; every path is a function of (seed, δ, path index).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Support-event levels ε, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    /// Exponent of the determinant threshold ε^ρ.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Radius of the lower-bound ball.
    #[arg(long)]
    pub r: Option<f64>,
    /// Polynomial weight exponent of the tail check.
    #[arg(long)]
    pub p: Option<f64>,
    /// `x0` or `x0+bdelta`.
    #[arg(long)]
    pub centering: Option<Centering>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `appendix-b` or `decomp2`.
    #[arg(long, value_parser = parse_v_convention)]
    pub convention_v: Option<VConvention>,
    /// `p-block` or `i-block`.
    #[arg(long, value_parser = parse_qp_convention)]
    pub convention_qp: Option<QpConvention>,
}

fn parse_v_convention(s: &str) -> Result<VConvention, String> {
    match s {
        "appendix-b" => Ok(VConvention::Weighted),
        "decomp2" => Ok(VConvention::Bare),
        other => Err(format!("`{other}` is not one of appendix-b, decomp2")),
    }
}

fn parse_qp_convention(s: &str) -> Result<QpConvention, String> {
    match s {
        "p-block" => Ok(QpConvention::PBlock),
        "i-block" => Ok(QpConvention::IBlock),
        other => Err(format!("`{other}` is not one of p-block, i-block")),
    }
}

impl RunArgs {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn load_config(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.model {
            c.model = Some(ModelChoice::Named(m.clone()));
        }
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = &self.$flag {
                    c.$field = v.clone().into();
                }
            };
        }
        set!(x0 => x0);
        set!(delta_grid => delta_grid);
        set!(paths => n_paths);
        set!(steps => steps_per_sub);
        set!(seed => seed);
        set!(eps_grid => eps_grid);
        set!(rho => rho);
        set!(r => r);
        set!(p => p_exponent);
        set!(centering => centering);
        set!(out => output_dir);
        set!(convention_v => v_convention);
        set!(convention_qp => qp_convention);
        Ok(c)
    }
}
