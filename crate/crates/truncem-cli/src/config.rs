//! Configuration assembly: JSON document, command-line flags on top, then
//! the seed environment override. Every invalid combination is rejected
//! before any simulation starts.

use std::fmt;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use truncem::SimError;

/// Environment variable overriding the seed from flags and config files.
pub const SEED_ENV_VAR: &str = "TRUNCEM_SEED";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Sim(SimError),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Sim(e) => write!(f, "{e}"),
            CliError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// Exit codes: 0 success, 2 configuration error, 3 estimator failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Sim(e) => match e {
                SimError::EstimatorDegenerate { .. }
                | SimError::NumericOverflow { .. }
                | SimError::HorizonNotReached { .. } => 3,
                _ => 2,
            },
        }
    }
}

/// Flags shared by every subcommand; unset options fall back to the JSON
/// config, then to per-command defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// JSON experiment document; explicit flags override its entries
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Problem name: example1, example2, timechanged2d, gbm, ou
    #[arg(long)]
    pub problem: Option<String>,
    /// Comma-separated step sizes, e.g. 1e-1,1e-2,1e-3
    #[arg(long, value_delimiter = ',')]
    pub dts: Option<Vec<f64>>,
    /// Reference (finest) step size for coupled sweeps
    #[arg(long = "ref-dt")]
    pub ref_dt: Option<f64>,
    /// Single step size (simulate)
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of Monte Carlo paths
    #[arg(long)]
    pub paths: Option<usize>,
    /// Error moment q for sweeps, or the probe moment parameter
    #[arg(long)]
    pub q: Option<f64>,
    /// Truncation schedule exponent, kappa(dt) = dt^-epsilon
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Base seed (64-bit unsigned); TRUNCEM_SEED overrides
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stability index of the subordinator, in (0, 1)
    #[arg(long = "alpha-s")]
    pub alpha_s: Option<f64>,
    /// Real-time horizon of the time change
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Moment order p (moments command)
    #[arg(long)]
    pub p: Option<f64>,
    /// Number of probe samples
    #[arg(long)]
    pub samples: Option<usize>,
    /// Half-width of the probe sampling box
    #[arg(long = "box-radius")]
    pub box_radius: Option<f64>,
    /// Scheme mode: truncated or classical
    #[arg(long)]
    pub mode: Option<String>,
    /// Reference oracle: fine (default) or exact (closed-form solution)
    #[arg(long)]
    pub oracle: Option<String>,
    /// Output path prefix
    #[arg(long)]
    pub out: Option<String>,
    /// Worker threads (0 = automatic); never changes output bytes
    #[arg(long)]
    pub workers: Option<usize>,
    /// Also write one sample path of D, E and the state coordinates
    #[arg(long = "emit-paths")]
    pub emit_paths: bool,
    /// Also emit the continuous version on a twice-finer grid (simulate)
    #[arg(long = "emit-continuous")]
    pub emit_continuous: bool,
    /// Use the bare power-law schedule kappa = dt^-epsilon without the
    /// f(1) codomain floor
    #[arg(long = "bare-kappa")]
    pub bare_kappa: bool,
    /// Subordinator test hook: read walk increments from a file, one
    /// decimal value per line
    #[arg(long = "subordinator-file", value_name = "FILE")]
    pub subordinator_file: Option<PathBuf>,
}

/// JSON mirror of the flag set.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub problem: Option<String>,
    pub dts: Option<Vec<f64>>,
    pub ref_dt: Option<f64>,
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub q: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub alpha_s: Option<f64>,
    pub horizon: Option<f64>,
    pub p: Option<f64>,
    pub samples: Option<usize>,
    pub box_radius: Option<f64>,
    pub mode: Option<String>,
    pub oracle: Option<String>,
    pub out: Option<String>,
    pub workers: Option<usize>,
    pub emit_paths: Option<bool>,
    pub emit_continuous: Option<bool>,
    pub bare_kappa: Option<bool>,
    pub subordinator_file: Option<PathBuf>,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub problem: Option<String>,
    pub dts: Option<Vec<f64>>,
    pub ref_dt: Option<f64>,
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub q: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub alpha_s: Option<f64>,
    pub horizon: Option<f64>,
    pub p: Option<f64>,
    pub samples: Option<usize>,
    pub box_radius: Option<f64>,
    pub mode: Option<String>,
    pub oracle: Option<String>,
    pub out: Option<String>,
    pub workers: usize,
    pub emit_paths: bool,
    pub emit_continuous: bool,
    pub bare_kappa: bool,
    pub subordinator_file: Option<PathBuf>,
}

pub fn resolve(args: &RunArgs) -> Result<Settings, CliError> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let mut seed = args.seed.or(file.seed).unwrap_or(42);
    if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
        seed = raw.parse::<u64>().map_err(|_| {
            CliError::Config(format!("{SEED_ENV_VAR}={raw} is not a 64-bit unsigned seed"))
        })?;
    }

    Ok(Settings {
        problem: args.problem.clone().or(file.problem),
        dts: args.dts.clone().or(file.dts),
        ref_dt: args.ref_dt.or(file.ref_dt),
        dt: args.dt.or(file.dt),
        paths: args.paths.or(file.paths),
        q: args.q.or(file.q),
        epsilon: args.epsilon.or(file.epsilon),
        seed,
        alpha_s: args.alpha_s.or(file.alpha_s),
        horizon: args.horizon.or(file.horizon),
        p: args.p.or(file.p),
        samples: args.samples.or(file.samples),
        box_radius: args.box_radius.or(file.box_radius),
        mode: args.mode.clone().or(file.mode),
        oracle: args.oracle.clone().or(file.oracle),
        out: args.out.clone().or(file.out),
        workers: args.workers.or(file.workers).unwrap_or(0),
        emit_paths: args.emit_paths || file.emit_paths.unwrap_or(false),
        emit_continuous: args.emit_continuous || file.emit_continuous.unwrap_or(false),
        bare_kappa: args.bare_kappa || file.bare_kappa.unwrap_or(false),
        subordinator_file: args.subordinator_file.clone().or(file.subordinator_file),
    })
}

impl Settings {
    pub fn require_problem(&self) -> Result<&str, CliError> {
        self.problem
            .as_deref()
            .ok_or_else(|| CliError::Config("missing --problem".into()))
    }

    pub fn require_dts(&self) -> Result<&[f64], CliError> {
        match &self.dts {
            Some(dts) if !dts.is_empty() => Ok(dts),
            _ => Err(CliError::Config("missing --dts".into())),
        }
    }

    pub fn require_ref_dt(&self) -> Result<f64, CliError> {
        self.ref_dt.ok_or_else(|| CliError::Config("missing --ref-dt".into()))
    }

    pub fn require_dt(&self) -> Result<f64, CliError> {
        self.dt.ok_or_else(|| CliError::Config("missing --dt".into()))
    }

    pub fn out_prefix(&self, command: &str) -> String {
        self.out.clone().unwrap_or_else(|| command.to_string())
    }
}
