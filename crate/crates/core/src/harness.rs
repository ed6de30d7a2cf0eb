//! Verification experiments: replica farms over the samplers, estimators
//! with standard errors, and verdicts against the closed-form predictors.

use crate::asymptotics::{
    clt_predict, free_energy_expansion, gaussian_moments, kls_asymptotic_bound, kls_ratio_finite_n,
    kls_variance_limit_bound, KlsMoments,
};
use crate::equilibrium::{CdfTable, FreudModel};
use crate::error::{invalid, Result};
use crate::master_op::TestFunction;
use crate::quadrature::gauss_legendre;
use crate::sampler::{
    chain_rng, run_chain_from, sample_gaussian_tridiagonal, stream_seed, LinearStatistic,
    LoopObservable, ParticleConfiguration, SamplerConfig,
};
use crate::special_fn::{mehta_log_partition, schatten_dim};
use crate::stieltjes::s_v;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

/// Smallest replica count for which a verdict other than inconclusive is issued.
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Fail if any input fails, otherwise inconclusive if any is, otherwise pass.
    pub fn combine<I: IntoIterator<Item = Verdict>>(it: I) -> Verdict {
        let mut out = Verdict::Pass;
        for v in it {
            match v {
                Verdict::Fail => return Verdict::Fail,
                Verdict::Inconclusive => out = Verdict::Inconclusive,
                Verdict::Pass => {}
            }
        }
        out
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Point estimate with standard error and the number of replicas behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64, n_samples: usize) -> Self {
        Estimate {
            value,
            std_error,
            n_samples,
        }
    }
}

/// Acceptance rule of one observable against its theory value t.
///
/// * `Within`: pass iff |x - t| ≤ max(k·se, abs_tolerance).
/// * `AtMost`: pass iff x - t ≤ k·se.
/// * `AtLeast`: pass iff t - x ≤ k·se.
///
/// A failed rule with k = 0 (a pure tolerance band or a one-sided bound)
/// is reported inconclusive instead when the miss is within 2·se, since
/// Monte Carlo noise alone can then explain it. Rules with k > 0 already
/// include the noise and fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    Within { k: f64, abs_tolerance: f64 },
    AtMost { k: f64 },
    AtLeast { k: f64 },
}

/// Verdict of `est` against `theory` under `rule`.
pub fn verdict(est: &Estimate, theory: f64, rule: &Rule) -> Verdict {
    if est.n_samples < MIN_SAMPLES
        || !est.value.is_finite()
        || !est.std_error.is_finite()
        || !theory.is_finite()
    {
        return Verdict::Inconclusive;
    }
    let se = est.std_error.max(0.0);
    let (miss, k) = match *rule {
        Rule::Within { k, abs_tolerance } => {
            let d = (est.value - theory).abs();
            if d <= (k * se).max(abs_tolerance) {
                return Verdict::Pass;
            }
            (d - abs_tolerance, k)
        }
        Rule::AtMost { k } => {
            let excess = est.value - theory;
            if excess <= k * se {
                return Verdict::Pass;
            }
            (excess, k)
        }
        Rule::AtLeast { k } => {
            let deficit = theory - est.value;
            if deficit <= k * se {
                return Verdict::Pass;
            }
            (deficit, k)
        }
    };
    if k == 0.0 && miss <= 2.0 * se {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    }
}

/// One row of the tidy CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub observable: String,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub re_z: Option<f64>,
    pub im_z: Option<f64>,
    pub q: Option<u32>,
    pub estimate: f64,
    pub std_error: f64,
    pub theory: Option<f64>,
    pub verdict: Option<Verdict>,
}

impl Cell {
    fn plain(
        observable: &str,
        n: Option<usize>,
        est: &Estimate,
        theory: Option<f64>,
        verdict: Option<Verdict>,
    ) -> Self {
        Cell {
            observable: observable.to_string(),
            n,
            re_z: None,
            im_z: None,
            q: None,
            estimate: est.value,
            std_error: est.std_error,
            theory,
            verdict,
        }
    }
}

/// Outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    /// echo of the experiment parameters
    pub config: serde_json::Value,
    pub model: Option<FreudModel>,
    pub estimates: BTreeMap<String, Estimate>,
    pub theory: BTreeMap<String, f64>,
    pub rules: BTreeMap<String, Rule>,
    pub verdicts: BTreeMap<String, Verdict>,
    /// auxiliary numbers that carry no verdict
    pub diagnostics: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    pub cells: Vec<Cell>,
    pub seed: u64,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn new(
        name: &str,
        config: serde_json::Value,
        model: Option<FreudModel>,
        seed: u64,
    ) -> Self {
        ExperimentReport {
            name: name.to_string(),
            config,
            model,
            estimates: BTreeMap::new(),
            theory: BTreeMap::new(),
            rules: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            flags: Vec::new(),
            cells: Vec::new(),
            seed,
            runtime_seconds: 0.0,
        }
    }

    /// Records an estimate with its theory value and rule, returning the verdict.
    pub fn check(&mut self, key: &str, est: Estimate, theory: f64, rule: Rule) -> Verdict {
        let v = verdict(&est, theory, &rule);
        self.estimates.insert(key.to_string(), est);
        self.theory.insert(key.to_string(), theory);
        self.rules.insert(key.to_string(), rule);
        self.verdicts.insert(key.to_string(), v);
        v
    }

    pub fn record(&mut self, key: &str, est: Estimate) {
        self.estimates.insert(key.to_string(), est);
    }

    pub fn diagnostic(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }

    pub fn overall(&self) -> Verdict {
        Verdict::combine(self.verdicts.values().copied())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tidy table, one row per cell. The theory column is named
    /// `theory_bound` for the local-law experiment.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let theory_col = if self.name == "local_law" {
            "theory_bound"
        } else {
            "theory"
        };
        w.write_record([
            "observable",
            "N",
            "re_z",
            "im_z",
            "q",
            "estimate",
            "std_error",
            theory_col,
            "verdict",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.observable.clone(),
                opt(c.n.map(|v| v.to_string())),
                opt(c.re_z.map(|v| v.to_string())),
                opt(c.im_z.map(|v| v.to_string())),
                opt(c.q.map(|v| v.to_string())),
                c.estimate.to_string(),
                c.std_error.to_string(),
                opt(c.theory.map(|v| v.to_string())),
                opt(c.verdict.map(|v| v.as_str().to_string())),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Which sampler produces replicas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// tridiagonal at α = 0, Metropolis otherwise
    Auto,
    Metropolis,
    Tridiagonal,
}

/// Replica-farm settings shared by all experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    /// independent chains (Metropolis) or blocks (exact sampler); also the
    /// jackknife groups
    pub chains: usize,
    /// Metropolis sweeps between retained replicas
    pub sweeps_per_replica: usize,
    /// share of each chain spent on burn-in
    pub burn_in_fraction: f64,
    pub sampler: SamplerKind,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            chains: 20,
            sweeps_per_replica: 200,
            burn_in_fraction: 0.2,
            sampler: SamplerKind::Auto,
            seed: 0,
        }
    }
}

impl McSettings {
    pub fn with_seed(seed: u64) -> Self {
        McSettings {
            seed,
            ..McSettings::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return invalid("at least 2 chains are needed for jackknife errors");
        }
        if self.sweeps_per_replica == 0 {
            return invalid("sweeps_per_replica must be positive");
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return invalid("burn_in_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    fn exact_for(&self, model: &FreudModel) -> Result<bool> {
        match self.sampler {
            SamplerKind::Auto => Ok(model.alpha == 0.0),
            SamplerKind::Metropolis => Ok(false),
            SamplerKind::Tridiagonal if model.alpha == 0.0 => Ok(true),
            SamplerKind::Tridiagonal => invalid("the tridiagonal sampler needs alpha = 0"),
        }
    }
}

/// Observables of replicas grouped by chain (or block).
#[derive(Debug, Clone)]
pub struct Replicas<T> {
    pub groups: Vec<Vec<T>>,
    pub acceptance_rates: Vec<f64>,
    pub flagged_chains: usize,
    pub exact: bool,
}

impl<T: Clone> Replicas<T> {
    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn flat(&self) -> Vec<T> {
        self.groups.iter().flatten().cloned().collect()
    }

    fn note(&self, report: &mut ExperimentReport, prefix: &str) {
        if !self.exact {
            let mean =
                self.acceptance_rates.iter().sum::<f64>() / self.acceptance_rates.len() as f64;
            report.diagnostic(&format!("{prefix}acceptance_rate"), mean);
            if self.flagged_chains > 0 {
                report.flags.push(format!(
                    "{prefix}{} chains with acceptance outside [0.05, 0.95]",
                    self.flagged_chains
                ));
            }
        }
    }
}

fn split_counts(total: usize, groups: usize) -> Vec<usize> {
    (0..groups)
        .map(|k| total / groups + usize::from(k < total % groups))
        .collect()
}

/// Draws `replicas` configurations of `model` and maps each through `obs`.
/// Group k uses the stream `stream_seed(seed, k)`; groups run in parallel
/// and are collected in index order.
pub fn draw_replicas<T, F>(
    model: &FreudModel,
    replicas: usize,
    mc: &McSettings,
    seed: u64,
    obs: F,
) -> Result<Replicas<T>>
where
    T: Send,
    F: Fn(&ParticleConfiguration) -> T + Sync,
{
    mc.validate()?;
    let exact = mc.exact_for(model)?;
    let counts = split_counts(replicas, mc.chains);
    let start = if exact {
        None
    } else {
        Some(ParticleConfiguration::equilibrium_quantiles(model))
    };
    let results: Vec<Result<(Vec<T>, f64, bool)>> = counts
        .par_iter()
        .enumerate()
        .map(|(k, &count)| {
            let gseed = stream_seed(seed, k as u64);
            if exact {
                let mut rng = chain_rng(gseed);
                let mut out = Vec::with_capacity(count);
                for _ in 0..count {
                    out.push(obs(&sample_gaussian_tridiagonal(
                        model.n, model.beta, &mut rng,
                    )?));
                }
                Ok((out, 1.0, false))
            } else {
                let gap = mc.sweeps_per_replica;
                let kept = count * gap;
                let burn =
                    ((kept as f64 * mc.burn_in_fraction / (1.0 - mc.burn_in_fraction)).ceil()
                        as usize)
                        .max(100);
                let cfg = SamplerConfig {
                    model: *model,
                    proposal_sigma: 1.0 / model.n as f64,
                    sweeps: burn + kept,
                    burn_in: burn,
                    thinning: gap,
                    seed: gseed,
                    adapt: true,
                };
                let chain = run_chain_from(&cfg, start.clone().expect("start configuration"))?;
                let out = chain.samples.iter().map(&obs).collect();
                Ok((out, chain.acceptance_rate, chain.flagged))
            }
        })
        .collect();
    let mut rep = Replicas {
        groups: Vec::new(),
        acceptance_rates: Vec::new(),
        flagged_chains: 0,
        exact,
    };
    for r in results {
        let (g, a, f) = r?;
        rep.groups.push(g);
        rep.acceptance_rates.push(a);
        rep.flagged_chains += usize::from(f);
    }
    Ok(rep)
}

/// Delete-one-group jackknife of `stat`. The value is `stat` on all data.
pub fn jackknife<T: Clone, F: Fn(&[T]) -> f64>(groups: &[Vec<T>], stat: F) -> Estimate {
    let all: Vec<T> = groups.iter().flatten().cloned().collect();
    let n = all.len();
    let value = stat(&all);
    let g = groups.iter().filter(|v| !v.is_empty()).count();
    if g < 2 {
        return Estimate::new(value, f64::NAN, n);
    }
    let leave: Vec<f64> = (0..groups.len())
        .filter(|&i| !groups[i].is_empty())
        .map(|i| {
            let rest: Vec<T> = groups
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, v)| v.iter().cloned())
                .collect();
            stat(&rest)
        })
        .collect();
    let gf = g as f64;
    let mean = leave.iter().sum::<f64>() / gf;
    let var = (gf - 1.0) / gf * leave.iter().map(|t| (t - mean).powi(2)).sum::<f64>();
    Estimate::new(value, var.sqrt(), n)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn central_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Kolmogorov survival function Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// sup |F_emp - F| for a sorted sample.
pub fn ks_distance_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value, with
/// the usual small-sample correction (√n_e + 0.12 + 0.11/√n_e)·D.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d))
}

/// Weighted least-squares slope of log y against log x, weights from the
/// relative errors of y. Returns (slope, standard error).
pub fn log_log_slope(xs: &[f64], ys: &[f64], ses: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 || xs.len() != ys.len() || ys.len() != ses.len() {
        return invalid("slope fit needs at least two points of equal-length inputs");
    }
    if ys.iter().any(|&y| !(y > 0.0)) || xs.iter().any(|&x| !(x > 0.0)) {
        return invalid("log-log fit needs positive data");
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&x, &y), &e) in xs.iter().zip(ys).zip(ses) {
        let (lx, ly) = (x.ln(), y.ln());
        let w = 1.0 / ((e / y).powi(2)).max(1e-300);
        s += w;
        sx += w * lx;
        sy += w * ly;
        sxx += w * lx * lx;
        sxy += w * lx * ly;
    }
    let det = s * sxx - sx * sx;
    Ok(((s * sxy - sx * sy) / det, (s / det).sqrt()))
}

fn finish(mut report: ExperimentReport, t0: Instant) -> ExperimentReport {
    report.runtime_seconds = t0.elapsed().as_secs_f64();
    report
}

/// Scale of the k-th raw moment of N(mean, var), used for relative bands.
fn moment_scale(mean: f64, var: f64, k: usize) -> f64 {
    let dfact: f64 = (1..=k)
        .rev()
        .step_by(2)
        .skip(1)
        .map(|v| v as f64)
        .product::<f64>()
        .max(1.0);
    (mean.abs() + var.sqrt()).powi(k as i32) * dfact
}

/// Relative band for limit statements (variance and higher moments).
pub const LIMIT_BAND: f64 = 0.15;

/// Replicas of L_N(f); empirical moments 1..K against the Gaussian
/// moments of the predicted mean and variance.
pub fn run_clt_experiment(
    model: &FreudModel,
    f: &TestFunction,
    replicas: usize,
    k_moments: usize,
    mc: &McSettings,
) -> Result<ExperimentReport> {
    let t0 = Instant::now();
    if !(1..=4).contains(&k_moments) {
        return invalid("K_moments must lie in 1..=4");
    }
    let pred = clt_predict(model, f, k_moments)?;
    let stat = LinearStatistic::new(model, f);
    let reps = draw_replicas(model, replicas, mc, stream_seed(mc.seed, 0), |c| {
        stat.eval(c)
    })?;
    let config = json!({ "f": f.label, "replicas": replicas, "K_moments": k_moments, "mc": mc });
    let mut report = ExperimentReport::new("clt", config, Some(*model), mc.seed);
    reps.note(&mut report, "");
    let n = Some(model.n);
    let m1 = jackknife(&reps.groups, mean);
    let v = report.check(
        "mean",
        m1,
        pred.mean,
        Rule::Within {
            k: 3.0,
            abs_tolerance: 0.0,
        },
    );
    report
        .cells
        .push(Cell::plain("mean", n, &m1, Some(pred.mean), Some(v)));
    let var = jackknife(&reps.groups, central_variance);
    let v = report.check(
        "variance",
        var,
        pred.variance,
        Rule::Within {
            k: 0.0,
            abs_tolerance: LIMIT_BAND * pred.variance,
        },
    );
    report.cells.push(Cell::plain(
        "variance",
        n,
        &var,
        Some(pred.variance),
        Some(v),
    ));
    report.diagnostic("variance_ratio", var.value / pred.variance);
    let targets = gaussian_moments(pred.mean, pred.variance, k_moments)?;
    for k in 2..=k_moments {
        let key = format!("moment_{k}");
        let est = jackknife(&reps.groups, |xs| {
            mean(&xs.iter().map(|x| x.powi(k as i32)).collect::<Vec<_>>())
        });
        let tol = LIMIT_BAND * moment_scale(pred.mean, pred.variance, k);
        let v = report.check(
            &key,
            est,
            targets[k - 1],
            Rule::Within {
                k: 3.0,
                abs_tolerance: tol,
            },
        );
        report
            .cells
            .push(Cell::plain(&key, n, &est, Some(targets[k - 1]), Some(v)));
    }
    Ok(finish(report, t0))
}

/// E|s_N(z) - s_{V_α}(z)|^q over a list of N, and the fitted log-log slope
/// per (z, q), expected to be -q within a band of 0.25·q.
pub fn run_local_law_experiment(
    model: &FreudModel,
    zs: &[Complex64],
    q_list: &[u32],
    n_list: &[usize],
    replicas: usize,
    mc: &McSettings,
) -> Result<ExperimentReport> {
    let t0 = Instant::now();
    if zs.iter().any(|z| !(z.im > 0.0)) {
        return invalid("every z must have positive imaginary part");
    }
    if q_list.iter().any(|&q| !(1..=2).contains(&q)) {
        return invalid("only q in {1, 2} is supported");
    }
    if n_list.len() < 2 {
        return invalid("the slope fit needs at least two values of N");
    }
    let svs: Vec<Complex64> = zs.iter().map(|&z| s_v(model, z)).collect::<Result<_>>()?;
    let config = json!({ "z": zs.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(), "q": q_list, "N_list": n_list, "replicas": replicas, "mc": mc });
    let mut report = ExperimentReport::new("local_law", config, Some(*model), mc.seed);
    // est[z][q][N]
    let mut table = vec![vec![Vec::new(); q_list.len()]; zs.len()];
    for (ni, &n) in n_list.iter().enumerate() {
        let m = model.with_n(n)?;
        let reps = draw_replicas(&m, replicas, mc, stream_seed(mc.seed, ni as u64), |c| {
            let nf = c.len() as f64;
            zs.iter()
                .zip(&svs)
                .map(|(&z, &sv)| {
                    let s: Complex64 = c
                        .positions
                        .iter()
                        .map(|&l| (l - z).inv())
                        .sum::<Complex64>()
                        / nf;
                    (s - sv).norm()
                })
                .collect::<Vec<f64>>()
        })?;
        reps.note(&mut report, &format!("N{n}_"));
        for (zi, z) in zs.iter().enumerate() {
            for (qi, &q) in q_list.iter().enumerate() {
                let est = jackknife(&reps.groups, |rows: &[Vec<f64>]| {
                    rows.iter().map(|r| r[zi].powi(q as i32)).sum::<f64>() / rows.len() as f64
                });
                report.record(&format!("E_abs_q{q}_z{zi}_N{n}"), est);
                report.diagnostic(
                    &format!("scaled_q{q}_z{zi}_N{n}"),
                    est.value * (n as f64 * z.im).powi(q as i32),
                );
                table[zi][qi].push(est);
            }
        }
    }
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let total = replicas * n_list.len();
    for (zi, z) in zs.iter().enumerate() {
        for (qi, &q) in q_list.iter().enumerate() {
            let ests = &table[zi][qi];
            let ys: Vec<f64> = ests.iter().map(|e| e.value).collect();
            let ses: Vec<f64> = ests.iter().map(|e| e.std_error).collect();
            let qf = q as f64;
            let key = format!("slope_q{q}_z{zi}");
            let (slope, se) = log_log_slope(&xs, &ys, &ses).unwrap_or((f64::NAN, f64::NAN));
            let v = report.check(
                &key,
                Estimate::new(slope, se, total),
                -qf,
                Rule::Within {
                    k: 0.0,
                    abs_tolerance: 0.25 * qf,
                },
            );
            for (e, &n) in ests.iter().zip(n_list) {
                report.cells.push(Cell {
                    observable: "E_abs_diff_pow_q".into(),
                    n: Some(n),
                    re_z: Some(z.re),
                    im_z: Some(z.im),
                    q: Some(q),
                    estimate: e.value,
                    std_error: e.std_error,
                    theory: Some((n as f64 * z.im).powi(-(q as i32))),
                    verdict: Some(v),
                });
            }
        }
    }
    Ok(finish(report, t0))
}

/// Monte Carlo mean of the first loop-equation bracket at each z; the
/// expectation is exactly 0 at every N.
pub fn run_loop_equation_experiment(
    model: &FreudModel,
    zs: &[Complex64],
    replicas: usize,
    mc: &McSettings,
) -> Result<ExperimentReport> {
    let t0 = Instant::now();
    let obs: Vec<LoopObservable> = zs
        .iter()
        .map(|&z| LoopObservable::new(model, z))
        .collect::<Result<_>>()?;
    let reps = draw_replicas(model, replicas, mc, stream_seed(mc.seed, 0), |c| {
        obs.iter().map(|o| o.eval(c)).collect::<Vec<_>>()
    })?;
    let config = json!({ "z": zs.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(), "replicas": replicas, "mc": mc });
    let mut report = ExperimentReport::new("loop_equation", config, Some(*model), mc.seed);
    reps.note(&mut report, "");
    for (zi, z) in zs.iter().enumerate() {
        for (part, pick) in [("re", 0usize), ("im", 1usize)] {
            let est = jackknife(&reps.groups, |rows: &[Vec<Complex64>]| {
                rows.iter()
                    .map(|r| if pick == 0 { r[zi].re } else { r[zi].im })
                    .sum::<f64>()
                    / rows.len() as f64
            });
            let key = format!("bracket_{part}_z{zi}");
            let v = report.check(
                &key,
                est,
                0.0,
                Rule::Within {
                    k: 3.0,
                    abs_tolerance: 0.0,
                },
            );
            let mut cell = Cell::plain(
                &format!("bracket_{part}"),
                Some(model.n),
                &est,
                Some(0.0),
                Some(v),
            );
            cell.re_z = Some(z.re);
            cell.im_z = Some(z.im);
            report.cells.push(cell);
        }
    }
    Ok(finish(report, t0))
}

/// Control-variate estimate of E[y] with the zero-mean variate w.
fn cv_mean(rows: &[(f64, f64)]) -> f64 {
    let n = rows.len() as f64;
    let my = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mw = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let (mut cyw, mut cww) = (0.0, 0.0);
    for &(y, w) in rows {
        cyw += (y - my) * (w - mw);
        cww += (w - mw) * (w - mw);
    }
    let b = if cww > 0.0 { cyw / cww } else { 0.0 };
    my - b * mw
}

/// Thermodynamic integration of log Z_N along V_α, α ∈ [0, 1], on an
/// `alpha_points` Gauss–Legendre grid, for each N in `n_list`.
///
/// Per α the integrand E_α⟨μ_N, ∂_αV_α⟩ is estimated with the virial
/// identity E[Σ λ_k V_α'(λ_k)] = N - 1 + 2/β as control variate.
pub fn run_thermo_integration(
    p: f64,
    beta: f64,
    n_list: &[usize],
    alpha_points: usize,
    replicas: usize,
    mc: &McSettings,
) -> Result<ExperimentReport> {
    let t0 = Instant::now();
    if alpha_points < 9 {
        return invalid("the alpha grid needs at least 9 points");
    }
    let expansion = free_energy_expansion(p, beta)?;
    let gl = gauss_legendre(alpha_points);
    let config = json!({ "p": p, "beta": beta, "N_list": n_list, "alpha_points": alpha_points, "replicas": replicas, "mc": mc });
    let mut report = ExperimentReport::new("thermo_integration", config, None, mc.seed);
    report.diagnostic("leading_theory", expansion.leading);
    report.diagnostic("f_minus1_theory", expansion.f_minus1);
    let mut residuals = Vec::new();
    for (ni, &n) in n_list.iter().enumerate() {
        let nf = n as f64;
        let mut integral = 0.0;
        let mut var = 0.0;
        let mut count = 0;
        for (ai, (t, w)) in gl.nodes.iter().zip(&gl.weights).enumerate() {
            let alpha = 0.5 * (1.0 + t);
            let model = FreudModel::new(p, beta, alpha, n)?;
            let seed = stream_seed(stream_seed(mc.seed, ni as u64), ai as u64);
            let virial = nf - 1.0 + 2.0 / beta;
            let reps = if p == 2.0 {
                // ∂_αV_α vanishes identically; no sampling needed
                Replicas {
                    groups: vec![vec![(0.0, 0.0); replicas]],
                    acceptance_rates: vec![],
                    flagged_chains: 0,
                    exact: true,
                }
            } else {
                draw_replicas(&model, replicas, mc, seed, |c| {
                    let y = c
                        .positions
                        .iter()
                        .map(|&x| model.d_alpha_potential(x))
                        .sum::<f64>()
                        / nf;
                    let w = c
                        .positions
                        .iter()
                        .map(|&x| x * model.potential_d1(x))
                        .sum::<f64>()
                        - virial;
                    (y, w)
                })?
            };
            reps.note(&mut report, &format!("N{n}_a{ai}_"));
            let est = if reps.groups.len() > 1 {
                jackknife(&reps.groups, cv_mean)
            } else {
                Estimate::new(0.0, 0.0, reps.total())
            };
            report.record(&format!("integrand_N{n}_a{ai}"), est);
            integral += 0.5 * w * est.value;
            var += (0.5 * w * est.std_error).powi(2);
            count += est.n_samples;
        }
        let se_int = var.sqrt();
        let ig = Estimate::new(integral, se_int, count);
        report.record(&format!("integral_N{n}"), ig);
        let log_zg = mehta_log_partition(n as u64, beta)?;
        let normalized = (log_zg - 0.5 * nf * nf * beta * integral) / (nf * nf * beta);
        let se_norm = 0.5 * se_int;
        report.record(
            &format!("normalized_log_z_N{n}"),
            Estimate::new(normalized, se_norm, count),
        );
        let leading = normalized - expansion.nlogn_coeff * nf.ln() / nf - expansion.f_minus1 / nf;
        let le = Estimate::new(leading, se_norm, count);
        let v = report.check(
            &format!("leading_N{n}"),
            le,
            expansion.leading,
            Rule::Within {
                k: 0.0,
                abs_tolerance: 0.01 * expansion.leading.abs(),
            },
        );
        report.cells.push(Cell::plain(
            "leading",
            Some(n),
            &le,
            Some(expansion.leading),
            Some(v),
        ));
        let rn = Estimate::new(
            nf * (normalized - expansion.log_partition(n as u64, beta) / (nf * nf * beta)),
            nf * se_norm,
            count,
        );
        report.record(&format!("residual_times_N_N{n}"), rn);
        report
            .cells
            .push(Cell::plain("residual_times_N", Some(n), &rn, None, None));
        residuals.push((n, rn));
    }
    for pair in residuals.windows(2) {
        let ((n1, r1), (n2, r2)) = (pair[0], pair[1]);
        let drop = Estimate::new(
            r1.value.abs() - r2.value.abs(),
            (r1.std_error.powi(2) + r2.std_error.powi(2)).sqrt(),
            r1.n_samples.min(r2.n_samples),
        );
        let key = format!("residual_decrease_N{n1}_N{n2}");
        let v = report.check(&key, drop, 0.0, Rule::AtLeast { k: 0.0 });
        report.cells.push(Cell::plain(
            "residual_decrease",
            Some(n2),
            &drop,
            Some(0.0),
            Some(v),
        ));
    }
    Ok(finish(report, t0))
}

/// Finite-N KLS ratio from log-gas replicas of ⟨μ_N,x^r⟩, ⟨μ_N,x²⟩ and
/// ⟨μ_N,x^{2r-2}⟩ under the pure Freud weight (α = 1).
pub fn run_kls_experiment(
    p: f64,
    beta: u32,
    r: u32,
    q: u32,
    n: usize,
    replicas: usize,
    mc: &McSettings,
) -> Result<ExperimentReport> {
    let t0 = Instant::now();
    if r == 0 || r % 2 == 1 || q == 0 {
        return invalid("r must be even and positive, q at least 1");
    }
    let model = FreudModel::new(p, beta as f64, 1.0, n)?;
    let nf = n as f64;
    let reps = draw_replicas(&model, replicas, mc, stream_seed(mc.seed, 0), |c| {
        let m = |k: i32| c.positions.iter().map(|x| x.powi(k)).sum::<f64>() / nf;
        (m(r as i32), m(2), m(2 * r as i32 - 2))
    })?;
    let qf = q as f64;
    let ratio_of = |rows: &[(f64, f64, f64)]| -> f64 {
        let a: Vec<f64> = rows.iter().map(|t| t.0).collect();
        let b: Vec<f64> = rows.iter().map(|t| t.1).collect();
        let c: Vec<f64> = rows.iter().map(|t| t.2).collect();
        KlsMoments::from_replicas(&a, &b, &c, qf)
            .and_then(|m| kls_ratio_finite_n(&m, p, beta, r, qf, n as u64))
            .map(|k| k.ratio)
            .unwrap_or(f64::NAN)
    };
    let flat = reps.flat();
    let a: Vec<f64> = flat.iter().map(|t| t.0).collect();
    let b: Vec<f64> = flat.iter().map(|t| t.1).collect();
    let c: Vec<f64> = flat.iter().map(|t| t.2).collect();
    let moments = KlsMoments::from_replicas(&a, &b, &c, qf)?;
    let delta = kls_ratio_finite_n(&moments, p, beta, r, qf, n as u64)?;
    let est = jackknife(&reps.groups, ratio_of);
    let asym = kls_asymptotic_bound(p, r)?;
    let config =
        json!({ "p": p, "beta": beta, "r": r, "q": q, "N": n, "replicas": replicas, "mc": mc });
    let mut report = ExperimentReport::new("kls", config, Some(model), mc.seed);
    reps.note(&mut report, "");
    report.record("ratio", est);
    let v1 = report.check(
        "ratio_at_most_4_6",
        est,
        4.0 * 1.15,
        Rule::AtMost { k: 0.0 },
    );
    let v2 = report.check("ratio_at_most_4", est, 4.0, Rule::AtMost { k: 3.0 });
    let v3 = report.check(
        "ratio_at_most_asymptote",
        est,
        asym,
        Rule::AtMost { k: 3.0 },
    );
    report.cells.push(Cell::plain(
        "ratio",
        Some(n),
        &est,
        Some(4.6),
        Some(Verdict::combine([v1, v2, v3])),
    ));
    report.diagnostic("asymptotic_bound", asym);
    report.diagnostic("ratio_delta_method_se", delta.se);
    report.diagnostic("numerator", delta.numerator);
    report.diagnostic("numerator_se", delta.numerator_se);
    report.diagnostic("g_rq", moments.g_rq);
    report.diagnostic("var_rq", moments.var_rq);
    report.diagnostic("g21", moments.g21);
    report.diagnostic("mixed", moments.mixed);
    let d = schatten_dim(n as u64, beta)? as f64;
    report.diagnostic("d_n_times_var", d * moments.var_rq);
    report.diagnostic("variance_limit_bound", kls_variance_limit_bound(p, r, qf)?);
    if delta.cancellation {
        report
            .flags
            .push("cancellation: numerator within two standard errors of zero".into());
    }
    Ok(finish(report, t0))
}

/// Pooled empirical CDF against the equilibrium CDF for each N; the KS
/// distance should decrease along `n_list` and be at most 0.02 at the
/// largest N.
pub fn run_equilibrium_convergence(
    model: &FreudModel,
    n_list: &[usize],
    replicas: usize,
    mc: &McSettings,
) -> Result<ExperimentReport> {
    let t0 = Instant::now();
    if n_list.is_empty() {
        return invalid("N_list is empty");
    }
    let table = CdfTable::new(model, 4096);
    let config = json!({ "N_list": n_list, "replicas": replicas, "mc": mc });
    let mut report =
        ExperimentReport::new("equilibrium_convergence", config, Some(*model), mc.seed);
    let mut ks = Vec::new();
    for (ni, &n) in n_list.iter().enumerate() {
        let m = model.with_n(n)?;
        let reps = draw_replicas(&m, replicas, mc, stream_seed(mc.seed, ni as u64), |c| {
            c.positions.clone()
        })?;
        reps.note(&mut report, &format!("N{n}_"));
        let stat = |rows: &[Vec<f64>]| {
            let mut pooled: Vec<f64> = rows.iter().flatten().copied().collect();
            pooled.sort_by(|a, b| a.total_cmp(b));
            ks_distance_sorted(&pooled, |x| table.cdf(x))
        };
        let est = jackknife(&reps.groups, stat);
        report.record(&format!("ks_N{n}"), est);
        ks.push((n, est));
    }
    let &(n_last, last) = ks.last().expect("non-empty");
    let v = report.check(
        &format!("ks_at_most_0_02_N{n_last}"),
        last,
        0.02,
        Rule::AtMost { k: 0.0 },
    );
    for (i, &(n, e)) in ks.iter().enumerate() {
        let verdict = if i + 1 == ks.len() { Some(v) } else { None };
        report.cells.push(Cell::plain(
            "ks_distance",
            Some(n),
            &e,
            if verdict.is_some() { Some(0.02) } else { None },
            verdict,
        ));
    }
    for pair in ks.windows(2) {
        let ((n1, a), (n2, b)) = (pair[0], pair[1]);
        let drop = Estimate::new(
            a.value - b.value,
            (a.std_error.powi(2) + b.std_error.powi(2)).sqrt(),
            a.n_samples.min(b.n_samples),
        );
        report.check(
            &format!("ks_decrease_N{n1}_N{n2}"),
            drop,
            0.0,
            Rule::AtLeast { k: 0.0 },
        );
        report.diagnostic(&format!("ks_factor_N{n1}_N{n2}"), a.value / b.value);
    }
    Ok(finish(report, t0))
}

/// Metropolis replicas of `model` against exact tridiagonal replicas of the
/// Gaussian model with the same N and β. The KS test uses one uniformly
/// chosen eigenvalue per replica, so both samples are i.i.d. draws of the
/// one-point marginal. The model must be Gaussian (α = 0, or p = 2).
pub fn run_sampler_cross_check(
    model: &FreudModel,
    replicas: usize,
    mc: &McSettings,
) -> Result<ExperimentReport> {
    let t0 = Instant::now();
    if !(model.alpha == 0.0 || model.p == 2.0) {
        return invalid("the cross-check needs a Gaussian model (alpha = 0 or p = 2)");
    }
    let gaussian = FreudModel::new(model.p, model.beta, 0.0, model.n)?;
    let metro = McSettings {
        sampler: SamplerKind::Metropolis,
        ..*mc
    };
    let exact = McSettings {
        sampler: SamplerKind::Tridiagonal,
        ..*mc
    };
    let a = draw_replicas(model, replicas, &metro, stream_seed(mc.seed, 0), |c| {
        c.positions.clone()
    })?;
    let b = draw_replicas(&gaussian, replicas, &exact, stream_seed(mc.seed, 1), |c| {
        c.positions.clone()
    })?;
    let mut rng = chain_rng(stream_seed(mc.seed, 2));
    let mut pick = |rows: &[Vec<f64>]| {
        rows.iter()
            .map(|r| r[rng.random_range(0..r.len())])
            .collect::<Vec<f64>>()
    };
    let (fa, fb) = (a.flat(), b.flat());
    let (sa, sb) = (pick(&fa), pick(&fb));
    let (d, pval) = ks_two_sample(&sa, &sb);
    let pooled_a: Vec<f64> = fa.iter().flatten().copied().collect();
    let pooled_b: Vec<f64> = fb.iter().flatten().copied().collect();
    let (dp, _) = ks_two_sample(&pooled_a, &pooled_b);
    let config = json!({ "replicas": replicas, "mc": mc });
    let mut report = ExperimentReport::new("sampler_cross_check", config, Some(*model), mc.seed);
    a.note(&mut report, "");
    let pe = Estimate::new(pval, 0.0, replicas);
    let v = report.check("ks_pvalue", pe, 0.001, Rule::AtLeast { k: 0.0 });
    report.cells.push(Cell::plain(
        "ks_pvalue",
        Some(model.n),
        &pe,
        Some(0.001),
        Some(v),
    ));
    report.diagnostic("ks_statistic", d);
    let de = Estimate::new(dp, 0.0, replicas);
    let v = report.check("pooled_ks_distance", de, 0.02, Rule::AtMost { k: 0.0 });
    report.cells.push(Cell::plain(
        "pooled_ks_distance",
        Some(model.n),
        &de,
        Some(0.02),
        Some(v),
    ));
    Ok(finish(report, t0))
}
