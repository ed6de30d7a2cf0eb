//! Run configuration: command-line flags merged over an optional flat
//! `key = value` file, with built-in defaults underneath.

use clap::{Args, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

/// Error in the user's input; maps to exit code 64.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Flags shared by every subcommand. Each one may also be given in the
/// `--config` file under the same name without the leading dashes.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Exponent p ≥ 2 of the Freud potential c_p|x|^p [default: 3]
    #[arg(long)]
    pub p: Option<f64>,
    /// Inverse temperature β > 0 [default: 2]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Interpolation parameter α ∈ [0, 1]; 0 is the Gaussian 2x², 1 the Freud potential [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of particles N [default: 64]
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Number of replicas (independent configurations) per cell [default: 500]
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Metropolis sweeps (N proposals each) between retained replicas [default: 200]
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Independent chains, also the jackknife groups [default: 20]
    #[arg(long)]
    pub chains: Option<usize>,
    /// 64-bit base seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the replica pool [default: available parallelism]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file; standard output when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format [default: json]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Test function from the registry: x, x2, x3, x4, cos, exp-window [default: x2]
    #[arg(long)]
    pub f: Option<String>,
    /// Comma-separated spectral points a+bi with b > 0 [default: 0.5+0.5i]
    #[arg(long = "z-grid")]
    pub z_grid: Option<String>,
    /// Comma-separated particle numbers [default: 64,128,256,512]
    #[arg(long = "N-list")]
    pub n_list: Option<String>,
    /// Comma-separated moment orders q (local law) or the single power q (kls) [default: 1]
    #[arg(long)]
    pub q: Option<String>,
    /// Even moment order r for kls [default: 2]
    #[arg(long)]
    pub r: Option<u32>,
    /// Number of CLT moments compared, 1 to 4 [default: 2]
    #[arg(long)]
    pub moments: Option<usize>,
    /// Flat key = value file; flags given on the command line take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub const KEYS: [&str; 17] = [
    "p", "beta", "alpha", "N", "replicas", "sweeps", "chains", "seed", "threads", "out", "format",
    "f", "z-grid", "N-list", "q", "r", "moments",
];

/// Fully resolved configuration, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub p: f64,
    pub beta: f64,
    pub alpha: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub replicas: usize,
    pub sweeps: usize,
    pub chains: usize,
    pub seed: u64,
    #[serde(skip)]
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub f: String,
    #[serde(rename = "z-grid")]
    pub z_grid: Vec<String>,
    #[serde(rename = "N-list")]
    pub n_list: Vec<usize>,
    pub q: Vec<u32>,
    pub r: u32,
    pub moments: usize,
}

/// Parses `key = value` lines; `#` starts a comment. Unknown keys and
/// repeated keys are errors.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(UsageError(format!(
                "config line {}: unknown key '{k}'",
                i + 1
            )));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(UsageError(format!(
                "config line {}: duplicate key '{k}'",
                i + 1
            )));
        }
    }
    Ok(map)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, UsageError> {
    v.trim()
        .parse()
        .map_err(|_| UsageError(format!("invalid value '{v}' for {key}")))
}

pub fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, UsageError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub fn parse_z(s: &str) -> Result<Complex64, UsageError> {
    let z = Complex64::from_str(s.trim())
        .map_err(|_| UsageError(format!("invalid complex number '{s}'")))?;
    if !(z.im > 0.0) {
        return Err(UsageError(format!(
            "spectral point '{s}' must have positive imaginary part"
        )));
    }
    Ok(z)
}

impl RunConfig {
    pub fn resolve(subcommand: &str, flags: &Flags) -> Result<RunConfig, UsageError> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    UsageError(format!("cannot read config {}: {e}", path.display()))
                })?;
                parse_config_file(&text)?
            }
            None => BTreeMap::new(),
        };
        let from_file = |key: &str| file.get(key).map(String::as_str);
        macro_rules! pick {
            ($flag:expr, $key:expr, $default:expr) => {
                match ($flag.clone(), from_file($key)) {
                    (Some(v), _) => v,
                    (None, Some(s)) => parse($key, s)?,
                    (None, None) => $default,
                }
            };
        }
        let format = match (flags.format, from_file("format")) {
            (Some(f), _) => f,
            (None, Some(s)) => Format::from_str(s, true)
                .map_err(|_| UsageError(format!("invalid format '{s}'")))?,
            (None, None) => Format::Json,
        };
        let z_text: String = pick!(flags.z_grid, "z-grid", "0.5+0.5i".to_string());
        let z_grid: Vec<String> = z_text
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        for z in &z_grid {
            parse_z(z)?;
        }
        let nl: String = pick!(flags.n_list, "N-list", "64,128,256,512".to_string());
        let ql: String = pick!(flags.q, "q", "1".to_string());
        let cfg = RunConfig {
            subcommand: subcommand.to_string(),
            p: pick!(flags.p, "p", 3.0),
            beta: pick!(flags.beta, "beta", 2.0),
            alpha: pick!(flags.alpha, "alpha", 1.0),
            n: pick!(flags.n, "N", 64),
            replicas: pick!(flags.replicas, "replicas", 500),
            sweeps: pick!(flags.sweeps, "sweeps", 200),
            chains: pick!(flags.chains, "chains", 20),
            seed: pick!(flags.seed, "seed", 0),
            threads: match (flags.threads, from_file("threads")) {
                (Some(t), _) => Some(t),
                (None, Some(s)) => Some(parse("threads", s)?),
                (None, None) => None,
            },
            out: match (&flags.out, from_file("out")) {
                (Some(o), _) => Some(o.clone()),
                (None, Some(s)) => Some(PathBuf::from(s)),
                (None, None) => None,
            },
            format,
            f: pick!(flags.f, "f", "x2".to_string()),
            z_grid,
            n_list: parse_list("N-list", &nl)?,
            q: parse_list("q", &ql)?,
            r: pick!(flags.r, "r", 2),
            moments: pick!(flags.moments, "moments", 2),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: String| Err(UsageError(m));
        if !(self.p >= 2.0) || !self.p.is_finite() {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.n == 0 || self.n_list.contains(&0) {
            return bad("N must be at least 1".into());
        }
        if self.chains < 2 {
            return bad("chains must be at least 2".into());
        }
        if self.sweeps == 0 {
            return bad("sweeps must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.n_list.is_empty() || self.q.is_empty() {
            return bad("N-list and q must not be empty".into());
        }
        Ok(())
    }

    pub fn zs(&self) -> Vec<Complex64> {
        self.z_grid
            .iter()
            .map(|s| parse_z(s).expect("validated"))
            .collect()
    }
}
