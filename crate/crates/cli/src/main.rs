//! `freud`: predictions and Monte Carlo verification for β-ensembles with
//! Freud weights.
//!
//! Exit codes: 0 when every verdict passes (or nothing is verified), 1 on
//! any failed verdict or runtime error, 2 when the verdicts are only pass
//! or inconclusive, 64 on usage errors.

mod config;

use clap::{Parser, Subcommand};
use config::{Flags, Format, RunConfig, UsageError};
use freud_core::asymptotics::{clt_predict, free_energy_expansion, schatten_volume_coeffs};
use freud_core::equilibrium::FreudModel;
use freud_core::harness::{self, ExperimentReport, McSettings, SamplerKind, Verdict};
use freud_core::master_op::TestFunction;
use freud_core::sampler::{chain_header, run_chain, write_samples_csv, SamplerConfig};
use freud_core::special_fn::schatten_dim;
use freud_core::Error;
use serde_json::{json, Value};
use std::io::Write;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "freud",
    version,
    about = "Equilibrium measures, CLT predictions and log-gas Monte Carlo for Freud-weight beta-ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the CLT mean, variance and Gaussian moments of L_N(f)
    Predict(Flags),
    /// Run one Metropolis chain and emit the retained configurations
    Sample(Flags),
    /// Compare Monte Carlo moments of L_N(f) with the CLT prediction
    VerifyClt(Flags),
    /// Fit the decay rate of E|s_N(z) - s_V(z)|^q over N-list
    VerifyLocalLaw(Flags),
    /// Check that the first loop-equation bracket has mean zero
    VerifyLoop(Flags),
    /// Print the free-energy expansion; with --integrate also run thermodynamic integration over N-list
    FreeEnergy {
        #[command(flatten)]
        flags: Flags,
        /// Estimate log Z_N by thermodynamic integration for each N in N-list
        #[arg(long)]
        integrate: bool,
    },
    /// Print the Schatten-ball volume coefficients and the log-volume at N (beta must be 1, 2 or 4)
    Schatten(Flags),
    /// Estimate the finite-N KLS ratio at (p, beta, r, q, N)
    Kls(Flags),
    /// KS distance of the pooled empirical measure to the equilibrium measure over N-list
    Equilibrium(Flags),
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

enum Outcome {
    Value(Value),
    Report(ExperimentReport),
    Samples(Vec<u8>),
}

fn mc(cfg: &RunConfig) -> McSettings {
    McSettings {
        chains: cfg.chains,
        sweeps_per_replica: cfg.sweeps,
        burn_in_fraction: 0.2,
        sampler: SamplerKind::Auto,
        seed: cfg.seed,
    }
}

fn model(cfg: &RunConfig) -> Result<FreudModel, Failure> {
    Ok(FreudModel::new(cfg.p, cfg.beta, cfg.alpha, cfg.n)?)
}

fn integer_beta(cfg: &RunConfig) -> Result<u32, Failure> {
    match cfg.beta {
        b if b == 1.0 || b == 2.0 || b == 4.0 => Ok(b as u32),
        b => Err(Failure::Usage(format!(
            "this subcommand needs beta in {{1, 2, 4}}, got {b}"
        ))),
    }
}

fn run(command: &Command, cfg: &RunConfig) -> Result<Outcome, Failure> {
    let settings = mc(cfg);
    Ok(match command {
        Command::Predict(_) => {
            let f = TestFunction::registry(&cfg.f)?;
            let pred = clt_predict(&model(cfg)?, &f, 4)?;
            Outcome::Value(
                json!({ "mean": pred.mean, "variance": pred.variance, "gaussian_moments": pred.moments }),
            )
        }
        Command::Sample(_) => {
            let m = model(cfg)?;
            let kept = cfg.replicas * cfg.sweeps;
            let burn = (kept / 4).max(100);
            let sc = SamplerConfig {
                model: m,
                proposal_sigma: 1.0 / m.n as f64,
                sweeps: burn + kept,
                burn_in: burn,
                thinning: cfg.sweeps,
                seed: cfg.seed,
                adapt: true,
            };
            let out = run_chain(&sc)?;
            match cfg.format {
                Format::Json => Outcome::Value(
                    serde_json::to_value(chain_header(&sc, &out))
                        .map_err(|e| Failure::Runtime(e.to_string()))?,
                ),
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_samples_csv(&out, &mut buf)?;
                    Outcome::Samples(buf)
                }
            }
        }
        Command::VerifyClt(_) => {
            let f = TestFunction::registry(&cfg.f)?;
            Outcome::Report(harness::run_clt_experiment(
                &model(cfg)?,
                &f,
                cfg.replicas,
                cfg.moments,
                &settings,
            )?)
        }
        Command::VerifyLocalLaw(_) => Outcome::Report(harness::run_local_law_experiment(
            &model(cfg)?,
            &cfg.zs(),
            &cfg.q,
            &cfg.n_list,
            cfg.replicas,
            &settings,
        )?),
        Command::VerifyLoop(_) => Outcome::Report(harness::run_loop_equation_experiment(
            &model(cfg)?,
            &cfg.zs(),
            cfg.replicas,
            &settings,
        )?),
        Command::FreeEnergy {
            integrate: false, ..
        } => {
            let e = free_energy_expansion(cfg.p, cfg.beta)?;
            Outcome::Value(json!({
                "leading": e.leading,
                "nlogn_coeff": e.nlogn_coeff,
                "f_minus1": e.f_minus1,
                "fg_minus1": e.fg_minus1,
                "log_partition_at_N": e.log_partition(cfg.n as u64, cfg.beta),
            }))
        }
        Command::FreeEnergy {
            integrate: true, ..
        } => Outcome::Report(harness::run_thermo_integration(
            cfg.p,
            cfg.beta,
            &cfg.n_list,
            15,
            cfg.replicas,
            &settings,
        )?),
        Command::Schatten(_) => {
            let beta = integer_beta(cfg)?;
            let c = schatten_volume_coeffs(cfg.p, beta)?;
            Outcome::Value(json!({
                "a": c.a, "b": c.b, "c": c.c, "d": c.d,
                "dimension": schatten_dim(cfg.n as u64, beta)?,
                "log_volume_expansion_at_N": c.log_volume(cfg.n as u64),
            }))
        }
        Command::Kls(_) => {
            let beta = integer_beta(cfg)?;
            Outcome::Report(harness::run_kls_experiment(
                cfg.p,
                beta,
                cfg.r,
                cfg.q[0],
                cfg.n,
                cfg.replicas,
                &settings,
            )?)
        }
        Command::Equilibrium(_) => Outcome::Report(harness::run_equilibrium_convergence(
            &model(cfg)?,
            &cfg.n_list,
            cfg.replicas,
            &settings,
        )?),
    })
}

fn flags_of(command: &Command) -> &Flags {
    match command {
        Command::Predict(f)
        | Command::Sample(f)
        | Command::VerifyClt(f)
        | Command::VerifyLocalLaw(f)
        | Command::VerifyLoop(f)
        | Command::Schatten(f)
        | Command::Kls(f)
        | Command::Equilibrium(f) => f,
        Command::FreeEnergy { flags, .. } => flags,
    }
}

fn name_of(command: &Command) -> &'static str {
    match command {
        Command::Predict(_) => "predict",
        Command::Sample(_) => "sample",
        Command::VerifyClt(_) => "verify-clt",
        Command::VerifyLocalLaw(_) => "verify-local-law",
        Command::VerifyLoop(_) => "verify-loop",
        Command::FreeEnergy { .. } => "free-energy",
        Command::Schatten(_) => "schatten",
        Command::Kls(_) => "kls",
        Command::Equilibrium(_) => "equilibrium",
    }
}

/// Renders the outcome. The JSON form keeps the run time in a separate
/// `timing` field so that everything else is reproducible byte for byte.
fn render(cfg: &RunConfig, outcome: &Outcome) -> Result<Vec<u8>, Failure> {
    let to_runtime = |e: serde_json::Error| Failure::Runtime(e.to_string());
    let mut buf = Vec::new();
    match (outcome, cfg.format) {
        (Outcome::Samples(bytes), _) => buf.extend_from_slice(bytes),
        (Outcome::Value(v), Format::Json) => {
            serde_json::to_writer_pretty(&mut buf, &json!({ "config": cfg, "result": v }))
                .map_err(to_runtime)?;
            buf.push(b'\n');
        }
        (Outcome::Value(v), Format::Csv) => {
            writeln!(buf, "key,value")?;
            if let Value::Object(map) = v {
                for (k, x) in map {
                    match x {
                        Value::Array(items) => {
                            for (i, item) in items.iter().enumerate() {
                                writeln!(buf, "{k}_{},{item}", i + 1)?;
                            }
                        }
                        other => writeln!(buf, "{k},{other}")?,
                    }
                }
            }
        }
        (Outcome::Report(r), Format::Json) => {
            let mut report = serde_json::to_value(r).map_err(to_runtime)?;
            if let Value::Object(map) = &mut report {
                map.remove("runtime_seconds");
            }
            let doc = json!({
                "config": cfg,
                "report": report,
                "overall": r.overall(),
                "timing": { "runtime_seconds": r.runtime_seconds },
            });
            serde_json::to_writer_pretty(&mut buf, &doc).map_err(to_runtime)?;
            buf.push(b'\n');
        }
        (Outcome::Report(r), Format::Csv) => r.write_csv(&mut buf)?,
    }
    Ok(buf)
}

fn execute(command: &Command) -> Result<ExitCode, Failure> {
    let cfg = RunConfig::resolve(name_of(command), flags_of(command))?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let outcome = run(command, &cfg)?;
    let bytes = render(&cfg, &outcome)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    let code = match &outcome {
        Outcome::Report(r) => {
            let overall = r.overall();
            eprintln!(
                "{}: {} ({:.1} s)",
                r.name,
                overall.as_str(),
                r.runtime_seconds
            );
            match overall {
                Verdict::Pass => 0,
                Verdict::Fail => 1,
                Verdict::Inconclusive => 2,
            }
        }
        _ => 0,
    };
    Ok(ExitCode::from(code))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(64)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
