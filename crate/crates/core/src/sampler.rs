//! Monte Carlo sampling of P_α: single-site Metropolis for any α and the
//! exact tridiagonal construction at α = 0, plus the observables evaluated
//! on particle configurations.

use crate::equilibrium::{
    build_grid, integrate_equilibrium, CdfTable, FreudModel, GridKind, QuadratureGrid,
};
use crate::error::{invalid, Result};
use crate::master_op::TestFunction;
use crate::stieltjes::{g_alpha_complex, h_alpha};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Generator used for every chain.
pub type ChainRng = Xoshiro256PlusPlus;

/// Seed of the `index`-th stream derived from `base`: the (index+1)-th
/// output of SplitMix64 seeded with `base`.
pub fn stream_seed(base: u64, index: u64) -> u64 {
    let mut sm = SplitMix64::seed_from_u64(base);
    let mut out = 0;
    for _ in 0..=index {
        out = sm.next_u64();
    }
    out
}

pub fn chain_rng(seed: u64) -> ChainRng {
    ChainRng::seed_from_u64(seed)
}

/// N particle positions with cached energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfiguration {
    pub positions: Vec<f64>,
    /// Σ_{i<j} log|λ_i - λ_j|
    pub cached_pair_energy: f64,
    /// Σ V_α(λ_i)
    pub cached_potential: f64,
}

fn pair_energy(xs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            acc += (xs[i] - xs[j]).abs().ln();
        }
    }
    acc
}

impl ParticleConfiguration {
    pub fn new(positions: Vec<f64>, model: &FreudModel) -> Self {
        let cached_pair_energy = pair_energy(&positions);
        let cached_potential = positions.iter().map(|&x| model.potential(x)).sum();
        ParticleConfiguration {
            positions,
            cached_pair_energy,
            cached_potential,
        }
    }

    /// λ_k at the k/(N+1) quantiles of μ_{V_α}.
    pub fn equilibrium_quantiles(model: &FreudModel) -> Self {
        let table = CdfTable::new(model, 2048);
        let n = model.n;
        let xs = (1..=n)
            .map(|k| table.quantile(k as f64 / (n as f64 + 1.0)))
            .collect();
        ParticleConfiguration::new(xs, model)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest deviation of either cache from a full recomputation.
    pub fn cache_drift(&self, model: &FreudModel) -> f64 {
        let fresh = ParticleConfiguration::new(self.positions.clone(), model);
        (fresh.cached_pair_energy - self.cached_pair_energy)
            .abs()
            .max((fresh.cached_potential - self.cached_potential).abs())
    }

    pub fn mirrored(&self, model: &FreudModel) -> Self {
        ParticleConfiguration::new(self.positions.iter().map(|x| -x).collect(), model)
    }
}

/// β Σ_{i<j} log|λ_i-λ_j| - (βN/2) Σ V_α(λ_i), recomputed from the positions.
/// Returns -∞ when two positions coincide.
pub fn log_density_unnormalized(model: &FreudModel, config: &ParticleConfiguration) -> f64 {
    let n = config.len() as f64;
    let pot: f64 = config.positions.iter().map(|&x| model.potential(x)).sum();
    model.beta * pair_energy(&config.positions) - 0.5 * model.beta * n * pot
}

/// Metropolis chain settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub model: FreudModel,
    pub proposal_sigma: f64,
    /// total sweeps including burn-in
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// tune σ during burn-in towards 30% acceptance
    pub adapt: bool,
}

impl SamplerConfig {
    /// Defaults scaled to the typical gap 1/N.
    pub fn new(
        model: FreudModel,
        sweeps: usize,
        burn_in: usize,
        thinning: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = SamplerConfig {
            model,
            proposal_sigma: 1.0 / model.n as f64,
            sweeps,
            burn_in,
            thinning,
            seed,
            adapt: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_sigma > 0.0) {
            return invalid(format!(
                "proposal_sigma must be positive, got {}",
                self.proposal_sigma
            ));
        }
        if self.burn_in >= self.sweeps {
            return invalid(format!(
                "burn_in ({}) must be below sweeps ({})",
                self.burn_in, self.sweeps
            ));
        }
        if self.thinning == 0 {
            return invalid("thinning must be at least 1");
        }
        Ok(())
    }
}

/// Result of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub samples: Vec<ParticleConfiguration>,
    /// sweep index of each sample
    pub sweep_indices: Vec<usize>,
    /// acceptance rate after burn-in
    pub acceptance_rate: f64,
    /// proposal scale after adaptation
    pub proposal_sigma: f64,
    pub seed: u64,
    /// acceptance rate outside [0.05, 0.95]
    pub flagged: bool,
}

const CHUNK: usize = 16;

/// Σ_{j≠i} log(|y-λ_j|/|x-λ_j|). Distances are multiplied in four lanes
/// and one logarithm is taken per chunk of 16; a chunk whose products leave
/// the normal range falls back to per-term logarithms.
fn pair_delta(xs: &[f64], i: usize, x: f64, y: f64) -> f64 {
    let mut acc = 0.0;
    for part in [&xs[..i], &xs[i + 1..]] {
        for chunk in part.chunks(CHUNK) {
            let mut pn = [1.0f64; 4];
            let mut pd = [1.0f64; 4];
            let mut quads = chunk.chunks_exact(4);
            for q in &mut quads {
                for k in 0..4 {
                    pn[k] *= (y - q[k]).abs();
                    pd[k] *= (x - q[k]).abs();
                }
            }
            for (k, &l) in quads.remainder().iter().enumerate() {
                pn[k] *= (y - l).abs();
                pd[k] *= (x - l).abs();
            }
            let num = pn[0] * pn[1] * (pn[2] * pn[3]);
            let den = pd[0] * pd[1] * (pd[2] * pd[3]);
            if num == 0.0 {
                return f64::NEG_INFINITY;
            }
            if num.is_normal() && den.is_normal() {
                acc += (num / den).ln();
            } else {
                acc += chunk
                    .iter()
                    .map(|&l| (y - l).abs().ln() - (x - l).abs().ln())
                    .sum::<f64>();
            }
        }
    }
    acc
}

/// One sweep of N single-site Gaussian proposals. Returns the number of
/// accepted moves.
pub fn metropolis_sweep<R: Rng + ?Sized>(
    config: &mut ParticleConfiguration,
    model: &FreudModel,
    sigma: f64,
    rng: &mut R,
) -> usize {
    let n = config.len();
    let beta = model.beta;
    let half_bn = 0.5 * beta * n as f64;
    let mut accepted = 0;
    for i in 0..n {
        let x = config.positions[i];
        let xi: f64 = rng.sample(StandardNormal);
        let y = x + sigma * xi;
        let dpair = pair_delta(&config.positions, i, x, y);
        if dpair == f64::NEG_INFINITY {
            continue;
        }
        let dpot = model.potential(y) - model.potential(x);
        let dlog = beta * dpair - half_bn * dpot;
        let u: f64 = rng.random();
        if dlog >= 0.0 || u.ln() < dlog {
            config.positions[i] = y;
            config.cached_pair_energy += dpair;
            config.cached_potential += dpot;
            accepted += 1;
        }
    }
    accepted
}

/// Runs one chain from the equilibrium quantile configuration.
pub fn run_chain(cfg: &SamplerConfig) -> Result<ChainOutput> {
    let start = ParticleConfiguration::equilibrium_quantiles(&cfg.model);
    run_chain_from(cfg, start)
}

/// Runs one chain from a given start. With `adapt`, log σ follows a
/// Robbins–Monro recursion towards 30% acceptance during burn-in and is
/// frozen afterwards.
pub fn run_chain_from(cfg: &SamplerConfig, start: ParticleConfiguration) -> Result<ChainOutput> {
    cfg.validate()?;
    let model = &cfg.model;
    if start.len() != model.n {
        return invalid(format!(
            "start has {} particles, model has N = {}",
            start.len(),
            model.n
        ));
    }
    let mut rng = chain_rng(cfg.seed);
    let mut conf = start;
    let n = model.n;
    let mut log_sigma = cfg.proposal_sigma.ln();
    let mut samples = Vec::new();
    let mut sweep_indices = Vec::new();
    let (mut acc, mut tried) = (0usize, 0usize);
    for sweep in 0..cfg.sweeps {
        let a = metropolis_sweep(&mut conf, model, log_sigma.exp(), &mut rng);
        if sweep < cfg.burn_in {
            if cfg.adapt {
                let rate = a as f64 / n as f64;
                let gain = 1.0 / (1.0 + sweep as f64).powf(0.6);
                log_sigma += gain * (rate - 0.3);
            }
        } else {
            acc += a;
            tried += n;
            if (sweep - cfg.burn_in + 1) % cfg.thinning == 0 {
                samples.push(conf.clone());
                sweep_indices.push(sweep);
            }
        }
        if cfg!(debug_assertions) && sweep % 1000 == 999 {
            debug_assert!(conf.cache_drift(model) <= 1e-9 * n as f64);
        }
        if sweep % 1000 == 999 {
            // refresh the caches so rounding does not accumulate
            conf = ParticleConfiguration::new(conf.positions, model);
        }
    }
    let acceptance_rate = if tried == 0 {
        0.0
    } else {
        acc as f64 / tried as f64
    };
    Ok(ChainOutput {
        samples,
        sweep_indices,
        acceptance_rate,
        proposal_sigma: log_sigma.exp(),
        seed: cfg.seed,
        flagged: !(0.05..=0.95).contains(&acceptance_rate),
    })
}

/// Independent chains with seeds `stream_seed(cfg.seed, k)`, run in parallel.
pub fn run_chains(cfg: &SamplerConfig, chains: usize) -> Result<Vec<ChainOutput>> {
    (0..chains)
        .into_par_iter()
        .map(|k| {
            let c = SamplerConfig {
                seed: stream_seed(cfg.seed, k as u64),
                ..*cfg
            };
            run_chain(&c)
        })
        .collect()
}

/// Eigenvalues of the symmetric tridiagonal matrix (diag, off) by the QL
/// algorithm with implicit Wilkinson shifts. `off[k]` couples k and k+1.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d
}

/// Exact sample of P_0 (V_0 = 2x²): eigenvalues of the β-Hermite matrix
/// (1/√2)·tridiag(N(0,2); χ_{β(N-1)}, …, χ_β), rescaled by 1/√(2βN).
pub fn sample_gaussian_tridiagonal<R: Rng + ?Sized>(
    n: usize,
    beta: f64,
    rng: &mut R,
) -> Result<ParticleConfiguration> {
    let model = FreudModel::new(2.0, beta, 0.0, n)?;
    let diag: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std::f64::consts::SQRT_2
        })
        .collect();
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let chi2 = ChiSquared::new(beta * (n - k) as f64)
            .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
        off.push(chi2.sample(rng).sqrt());
    }
    let scale = std::f64::consts::FRAC_1_SQRT_2 / (2.0 * beta * n as f64).sqrt();
    let diag: Vec<f64> = diag.iter().map(|v| v * scale).collect();
    let off: Vec<f64> = off.iter().map(|v| v * scale).collect();
    Ok(ParticleConfiguration::new(
        tridiagonal_eigenvalues(&diag, &off),
        &model,
    ))
}

/// L_N(f) = Σ f(λ_k) - N⟨μ_{V_α}, f⟩ with the equilibrium mean cached.
#[derive(Debug, Clone)]
pub struct LinearStatistic {
    pub f: TestFunction,
    pub equilibrium_mean: f64,
}

impl LinearStatistic {
    pub fn new(model: &FreudModel, f: &TestFunction) -> Self {
        // centring at f(0) uses the unit mass of μ_{V_α} analytically, so
        // constants cancel exactly
        let f0 = f.f(0.0);
        let equilibrium_mean = f0 + integrate_equilibrium(model, |x| f.f(x) - f0, &[0.0]);
        LinearStatistic {
            f: f.clone(),
            equilibrium_mean,
        }
    }

    pub fn eval(&self, config: &ParticleConfiguration) -> f64 {
        config
            .positions
            .iter()
            .map(|&x| self.f.f(x) - self.equilibrium_mean)
            .sum()
    }
}

pub fn linear_statistic(
    config: &ParticleConfiguration,
    model: &FreudModel,
    f: &TestFunction,
) -> f64 {
    LinearStatistic::new(model, f).eval(config)
}

fn check_nonreal(z: Complex64) -> Result<()> {
    if z.im == 0.0 {
        return invalid("z must have a non-zero imaginary part");
    }
    Ok(())
}

/// s_N(z) = (1/N) Σ 1/(λ_k - z).
pub fn empirical_stieltjes(config: &ParticleConfiguration, z: Complex64) -> Result<Complex64> {
    check_nonreal(z)?;
    let s: Complex64 = config.positions.iter().map(|&l| (l - z).inv()).sum();
    Ok(s / config.len() as f64)
}

/// s_N'(z) = (1/N) Σ 1/(λ_k - z)².
pub fn empirical_stieltjes_derivative(
    config: &ParticleConfiguration,
    z: Complex64,
) -> Result<Complex64> {
    check_nonreal(z)?;
    let s: Complex64 = config
        .positions
        .iter()
        .map(|&l| (l - z).inv().powi(2))
        .sum();
    Ok(s / config.len() as f64)
}

fn diff_quotient(f: &TestFunction, a: f64, fa: f64, b: f64, fb: f64) -> f64 {
    if a == b {
        f.df(a)
    } else {
        (fa - fb) / (a - b)
    }
}

/// Anisotropy N²∬ (f(λ)-f(λ'))/(λ-λ') d(μ_N-μ_{V_α})², with the equilibrium
/// parts evaluated on a fixed equilibrium grid.
#[derive(Debug, Clone)]
pub struct Anisotropy {
    f: TestFunction,
    grid: QuadratureGrid,
    grid_f: Vec<f64>,
    eq_eq: f64,
}

impl Anisotropy {
    pub fn new(model: &FreudModel, f: &TestFunction) -> Result<Self> {
        let grid = build_grid(GridKind::Equilibrium, 600, model)?;
        let grid_f: Vec<f64> = grid.nodes.iter().map(|&t| f.f(t)).collect();
        let mut eq_eq = 0.0;
        for (i, &x) in grid.nodes.iter().enumerate() {
            let mut row = 0.0;
            for (j, &y) in grid.nodes.iter().enumerate() {
                row += grid.weights[j] * diff_quotient(f, x, grid_f[i], y, grid_f[j]);
            }
            eq_eq += grid.weights[i] * row;
        }
        Ok(Anisotropy {
            f: f.clone(),
            grid,
            grid_f,
            eq_eq,
        })
    }

    pub fn eval(&self, config: &ParticleConfiguration) -> f64 {
        let xs = &config.positions;
        let n = xs.len() as f64;
        let fx: Vec<f64> = xs.iter().map(|&x| self.f.f(x)).collect();
        let mut emp = 0.0;
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                emp += diff_quotient(&self.f, xs[i], fx[i], xs[j], fx[j]);
            }
        }
        let mut cross = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            for (k, &t) in self.grid.nodes.iter().enumerate() {
                cross += self.grid.weights[k] * diff_quotient(&self.f, x, fx[i], t, self.grid_f[k]);
            }
        }
        emp - 2.0 * n * cross + n * n * self.eq_eq
    }
}

pub fn anisotropy(
    config: &ParticleConfiguration,
    model: &FreudModel,
    f: &TestFunction,
) -> Result<f64> {
    Ok(Anisotropy::new(model, f)?.eval(config))
}

/// First loop-equation bracket at a fixed z:
/// P_α(z) + L_N(f_{α,z})/(Nz) + (1/N)(2/β-1)s_N'(z), with h_α(z) cached.
#[derive(Debug, Clone, Copy)]
pub struct LoopObservable {
    pub model: FreudModel,
    pub z: Complex64,
    g_z: Complex64,
    h_z: Complex64,
}

impl LoopObservable {
    pub fn new(model: &FreudModel, z: Complex64) -> Result<Self> {
        check_nonreal(z)?;
        Ok(LoopObservable {
            model: *model,
            z,
            g_z: g_alpha_complex(model, z),
            h_z: h_alpha(model, z)?,
        })
    }

    pub fn eval(&self, config: &ParticleConfiguration) -> Complex64 {
        let z = self.z;
        let n = config.len() as f64;
        let mut s = Complex64::new(0.0, 0.0);
        let mut ds = Complex64::new(0.0, 0.0);
        let mut sum_f = Complex64::new(0.0, 0.0);
        for &l in &config.positions {
            let inv = (l - z).inv();
            s += inv;
            ds += inv * inv;
            sum_f += (self.model.g_alpha_real(l) - self.g_z) * inv;
        }
        s /= n;
        ds /= n;
        let p = s * s + self.g_z / z * s + self.h_z / z;
        let l_n = sum_f - self.h_z * n;
        p + l_n / (n * z) + ds * ((2.0 / self.model.beta - 1.0) / n)
    }
}

pub fn loop_observable(
    config: &ParticleConfiguration,
    model: &FreudModel,
    z: Complex64,
) -> Result<Complex64> {
    Ok(LoopObservable::new(model, z)?.eval(config))
}

/// #{k : a ≤ λ_k ≤ b}.
pub fn count_in_interval(config: &ParticleConfiguration, a: f64, b: f64) -> Result<usize> {
    if a > b {
        return invalid(format!("empty interval [{a}, {b}]"));
    }
    Ok(config
        .positions
        .iter()
        .filter(|&&x| a <= x && x <= b)
        .count())
}

/// JSON header describing a chain: configuration echo and acceptance stats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainHeader {
    pub config: SamplerConfig,
    pub acceptance_rate: f64,
    pub proposal_sigma: f64,
    pub flagged: bool,
    pub samples: usize,
}

pub fn chain_header(cfg: &SamplerConfig, out: &ChainOutput) -> ChainHeader {
    ChainHeader {
        config: *cfg,
        acceptance_rate: out.acceptance_rate,
        proposal_sigma: out.proposal_sigma,
        flagged: out.flagged,
        samples: out.samples.len(),
    }
}

/// Writes one CSV row per sample: seed, sweep, λ_1..λ_N.
pub fn write_samples_csv<W: Write>(out: &ChainOutput, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    if let Some(first) = out.samples.first() {
        let mut header = vec!["seed".to_string(), "sweep".to_string()];
        header.extend((1..=first.len()).map(|k| format!("lambda_{k}")));
        w.write_record(&header)?;
    }
    for (conf, sweep) in out.samples.iter().zip(&out.sweep_indices) {
        let mut row = vec![out.seed.to_string(), sweep.to_string()];
        row.extend(conf.positions.iter().map(|x| format!("{x:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_samples_csv`] back as (seed, sweep, positions).
pub fn read_samples_csv<R: std::io::Read>(reader: R) -> Result<Vec<(u64, usize, Vec<f64>)>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err =
            |what: &str| crate::Error::InvalidArgument(format!("bad {what} in samples CSV"));
        let seed = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("seed"))?;
        let sweep = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("sweep"))?;
        let xs = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| parse_err("position")))
            .collect::<Result<Vec<_>>>()?;
        rows.push((seed, sweep, xs));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use std::f64::consts::PI;

    fn model(p: f64, beta: f64, alpha: f64, n: usize) -> FreudModel {
        FreudModel::new(p, beta, alpha, n).unwrap()
    }

    #[test]
    fn log_density_examples() {
        let m1 = model(3.0, 2.0, 0.4, 1);
        let c = ParticleConfiguration::new(vec![0.3], &m1);
        assert!((log_density_unnormalized(&m1, &c) + m1.potential(0.3)).abs() < 1e-15);
        let m2 = model(3.0, 1.5, 1.0, 2);
        let a = 0.4;
        let c = ParticleConfiguration::new(vec![-a, a], &m2);
        let expect = 1.5 * (2.0 * a).ln() - 2.0 * 1.5 * m2.potential(a);
        assert!((log_density_unnormalized(&m2, &c) - expect).abs() < 1e-14);
        let m5 = model(2.5, 1.0, 1.0, 5);
        let xs = vec![0.1, -0.5, 0.7, 0.2, -0.9];
        let mut ys = xs.clone();
        ys.reverse();
        let d1 = log_density_unnormalized(&m5, &ParticleConfiguration::new(xs, &m5));
        let d2 = log_density_unnormalized(&m5, &ParticleConfiguration::new(ys, &m5));
        assert!((d1 - d2).abs() < 1e-13);
        let c = ParticleConfiguration::new(vec![0.2, 0.2], &m2);
        assert_eq!(log_density_unnormalized(&m2, &c), f64::NEG_INFINITY);
    }

    #[test]
    fn stream_seeds_are_distinct_and_stable() {
        let s: Vec<u64> = (0..5).map(|k| stream_seed(42, k)).collect();
        for i in 0..5 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(stream_seed(42, 3), s[3]);
    }

    #[test]
    fn tiny_sigma_accepts_everything() {
        let m = model(3.0, 2.0, 1.0, 16);
        let mut c = ParticleConfiguration::equilibrium_quantiles(&m);
        let mut rng = chain_rng(7);
        let mut acc = 0;
        for _ in 0..20 {
            acc += metropolis_sweep(&mut c, &m, 1e-9, &mut rng);
        }
        assert!(acc as f64 / (20.0 * 16.0) > 0.99);
    }

    #[test]
    fn cache_tracks_full_recomputation() {
        let m = model(2.5, 1.0, 0.7, 32);
        let mut c = ParticleConfiguration::equilibrium_quantiles(&m);
        let mut rng = chain_rng(11);
        for _ in 0..10_000 {
            metropolis_sweep(&mut c, &m, 0.03, &mut rng);
        }
        assert!(c.cache_drift(&m) <= 1e-9 * 32.0, "{}", c.cache_drift(&m));
    }

    #[test]
    fn one_particle_variance_matches_quadrature() {
        // p=2, α=1, β=2, N=1: density ∝ exp(-V(λ)), V = 2λ²
        let m = model(2.0, 2.0, 1.0, 1);
        let w = |x: f64| (-m.potential(x)).exp();
        let z = integrate(w, -8.0, 8.0, 1e-14, 1e-13).0;
        let var = integrate(|x| x * x * w(x), -8.0, 8.0, 1e-14, 1e-13).0 / z;
        let cfg = SamplerConfig {
            proposal_sigma: 1.0,
            adapt: false,
            ..SamplerConfig::new(m, 201_000, 1_000, 2, 5).unwrap()
        };
        let out = run_chain(&cfg).unwrap();
        let xs: Vec<f64> = out.samples.iter().map(|c| c.positions[0]).collect();
        let (est, se) = batch_mean_se(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!((est - var).abs() < 3.0 * se, "{est} ± {se} vs {var}");
    }

    #[test]
    fn two_particle_gap_matches_quadrature() {
        // β=1, α=1, p=3, N=2
        let m = model(3.0, 1.0, 1.0, 2);
        let dens = |a: f64, b: f64| ((a - b).abs().ln() - (m.potential(a) + m.potential(b))).exp();
        let inner =
            |a: f64, g: &dyn Fn(f64, f64) -> f64| integrate(|b| g(a, b), -3.0, 3.0, 1e-13, 1e-11).0;
        let z = integrate(|a| inner(a, &|a, b| dens(a, b)), -3.0, 3.0, 1e-13, 1e-10).0;
        let gap = integrate(
            |a| inner(a, &|a, b| (a - b).abs() * dens(a, b)),
            -3.0,
            3.0,
            1e-13,
            1e-10,
        )
        .0 / z;
        let cfg = SamplerConfig::new(m, 102_000, 2_000, 2, 9).unwrap();
        let out = run_chain(&cfg).unwrap();
        let gaps: Vec<f64> = out
            .samples
            .iter()
            .map(|c| (c.positions[0] - c.positions[1]).abs())
            .collect();
        let (est, se) = batch_mean_se(&gaps);
        assert!((est - gap).abs() < 3.0 * se, "{est} ± {se} vs {gap}");
    }

    /// Mean and standard error by 50 batch means.
    fn batch_mean_se(xs: &[f64]) -> (f64, f64) {
        let b = 50;
        let len = xs.len() / b;
        let means: Vec<f64> = (0..b)
            .map(|k| xs[k * len..(k + 1) * len].iter().sum::<f64>() / len as f64)
            .collect();
        let m = means.iter().sum::<f64>() / b as f64;
        let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b as f64 - 1.0);
        (m, (v / b as f64).sqrt())
    }

    #[test]
    fn chains_are_reproducible() {
        let m = model(3.0, 2.0, 1.0, 8);
        let cfg = SamplerConfig::new(m, 300, 100, 10, 123).unwrap();
        let a = run_chain(&cfg).unwrap();
        let b = run_chain(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(!a.flagged);
        let c = run_chain(&SamplerConfig { seed: 124, ..cfg }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn config_validation() {
        let m = model(3.0, 2.0, 1.0, 8);
        assert!(SamplerConfig::new(m, 100, 100, 1, 0).is_err());
        assert!(SamplerConfig::new(m, 100, 10, 0, 0).is_err());
        let bad = SamplerConfig {
            proposal_sigma: 0.0,
            ..SamplerConfig::new(m, 100, 10, 1, 0).unwrap()
        };
        assert!(run_chain(&bad).is_err());
    }

    #[test]
    fn tridiagonal_eigenvalues_small_cases() {
        let ev = tridiagonal_eigenvalues(&[2.0, 2.0], &[1.0]);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        // path-graph Laplacian-like matrix: 2 - 2cos(kπ/(n+1))
        let n = 50;
        let ev = tridiagonal_eigenvalues(&vec![2.0; n], &vec![-1.0; n - 1]);
        for (k, v) in ev.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * PI / (n as f64 + 1.0)).cos();
            assert!((v - exact).abs() < 1e-12);
        }
        assert_eq!(tridiagonal_eigenvalues(&[0.7], &[]), vec![0.7]);
    }

    #[test]
    fn tridiagonal_scaling_second_moment() {
        let mut rng = chain_rng(2024);
        let (n, beta, draws) = (256, 2.0, 2000);
        let mut m2 = Vec::with_capacity(draws);
        let mut max_abs: f64 = 0.0;
        for _ in 0..draws {
            let c = sample_gaussian_tridiagonal(n, beta, &mut rng).unwrap();
            m2.push(c.positions.iter().map(|x| x * x).sum::<f64>() / n as f64);
            max_abs = c.positions.iter().fold(max_abs, |m, x| m.max(x.abs()));
        }
        let mean = m2.iter().sum::<f64>() / draws as f64;
        let sd = (m2.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0)).sqrt();
        let se = sd / (draws as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se + 1e-12, "{mean} ± {se}");
        assert!(max_abs <= 1.1);
    }

    #[test]
    fn tridiagonal_one_particle_variance() {
        // N=1: density ∝ exp(-βλ²), variance 1/(2β)
        let mut rng = chain_rng(3);
        let beta = 2.0;
        let xs: Vec<f64> = (0..40_000)
            .map(|_| {
                sample_gaussian_tridiagonal(1, beta, &mut rng)
                    .unwrap()
                    .positions[0]
            })
            .collect();
        let v = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let se = (2.0 * 0.25f64.powi(2) / xs.len() as f64).sqrt();
        assert!((v - 0.25).abs() < 3.0 * se, "{v}");
    }

    #[test]
    fn linear_statistic_examples() {
        let m = model(2.0, 2.0, 1.0, 256);
        let c = ParticleConfiguration::equilibrium_quantiles(&m);
        assert_eq!(
            linear_statistic(&c, &m, &TestFunction::constant(2.5)).abs(),
            0.0
        );
        let l = linear_statistic(&c, &m, &TestFunction::registry("x2").unwrap());
        assert!(l.abs() <= 1.0, "{l}");
        let m3 = model(3.0, 2.0, 1.0, 5);
        let c = ParticleConfiguration::new(vec![0.1, -0.4, 0.6, 0.3, 0.9], &m3);
        let f = TestFunction::registry("x3").unwrap();
        let a = linear_statistic(&c, &m3, &f);
        let b = linear_statistic(&c.mirrored(&m3), &m3, &f);
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn constant_statistic_is_exactly_zero() {
        let m = model(2.5, 1.0, 1.0, 7);
        let c = ParticleConfiguration::new(vec![0.1, -0.4, 0.6, 0.3, 0.9, -0.2, 0.05], &m);
        for v in [2.5, -1e3, 0.0] {
            assert_eq!(linear_statistic(&c, &m, &TestFunction::constant(v)), 0.0);
        }
    }

    #[test]
    fn stieltjes_examples() {
        let m = model(3.0, 2.0, 1.0, 1);
        let c = ParticleConfiguration::new(vec![0.0], &m);
        let i = Complex64::new(0.0, 1.0);
        assert!((empirical_stieltjes(&c, i).unwrap() - i).norm() < 1e-15);
        assert!((empirical_stieltjes_derivative(&c, i).unwrap() + 1.0).norm() < 1e-15);
        assert!(empirical_stieltjes(&c, Complex64::new(0.5, 0.0)).is_err());
        let m5 = model(3.0, 2.0, 1.0, 5);
        let c = ParticleConfiguration::new(vec![0.1, -0.4, 0.6, 0.3, 0.9], &m5);
        let z = Complex64::new(0.3, 0.2);
        assert!(
            (empirical_stieltjes(&c, z.conj()).unwrap()
                - empirical_stieltjes(&c, z).unwrap().conj())
            .norm()
                < 1e-14
        );
        let big = Complex64::new(60.0, 80.0);
        let err = (empirical_stieltjes(&c, big).unwrap() + big.inv()).norm();
        assert!(err <= 0.9 / big.norm_sqr() * 1.01, "{err}");
    }

    #[test]
    fn anisotropy_examples() {
        let m = model(3.0, 2.0, 1.0, 8);
        let c = ParticleConfiguration::new(vec![-0.8, -0.5, -0.3, 0.0, 0.1, 0.35, 0.6, 0.95], &m);
        let lin = TestFunction::new("lin", |x| 2.0 * x + 1.0, |_| 2.0, |_| 0.0);
        assert!(anisotropy(&c, &m, &lin).unwrap().abs() < 1e-10);
        assert!(
            anisotropy(&c, &m, &TestFunction::registry("x2").unwrap())
                .unwrap()
                .abs()
                < 1e-10
        );
        // for x³ the difference quotient is x² + xy + y², so A_N = L_N(x)²
        let lx = linear_statistic(&c, &m, &TestFunction::registry("x").unwrap());
        let a3 = anisotropy(&c, &m, &TestFunction::registry("x3").unwrap()).unwrap();
        assert!((a3 - lx * lx).abs() < 1e-10, "{a3} vs {}", lx * lx);
    }

    #[test]
    fn anisotropy_matches_adaptive_decomposition() {
        let m = model(2.5, 1.0, 1.0, 64);
        let c = ParticleConfiguration::equilibrium_quantiles(&m);
        let f = TestFunction::registry("cos").unwrap();
        let grid_value = anisotropy(&c, &m, &f).unwrap();
        let n = 64.0;
        let dq = |a: f64, b: f64| {
            if a == b {
                f.df(a)
            } else {
                (f.f(a) - f.f(b)) / (a - b)
            }
        };
        let emp: f64 = c
            .positions
            .iter()
            .flat_map(|&a| c.positions.iter().map(move |&b| (a, b)))
            .map(|(a, b)| dq(a, b))
            .sum();
        let cross: f64 = c
            .positions
            .iter()
            .map(|&a| integrate_equilibrium(&m, |t| dq(a, t), &[0.0, a]))
            .sum();
        let eq: f64 = integrate_equilibrium(
            &m,
            |s| integrate_equilibrium(&m, |t| dq(s, t), &[0.0, s]),
            &[0.0],
        );
        let direct = emp - 2.0 * n * cross + n * n * eq;
        assert!(
            (grid_value - direct).abs() < 1e-8,
            "{grid_value} vs {direct}"
        );
    }

    #[test]
    fn loop_bracket_one_particle_quadrature() {
        // N=1, α=0: E[bracket] = 0 under exp(-(β/2)V_0)
        for beta in [1.0, 2.0, 4.0] {
            let m = model(3.0, beta, 0.0, 1);
            let obs = LoopObservable::new(&m, Complex64::new(0.5, 0.5)).unwrap();
            let w = |x: f64| (-0.5 * beta * m.potential(x)).exp();
            let z = integrate(w, -10.0, 10.0, 1e-15, 1e-13).0;
            let f = |x: f64| obs.eval(&ParticleConfiguration::new(vec![x], &m)) * w(x);
            let re = integrate(|x| f(x).re, -10.0, 10.0, 1e-15, 1e-12).0 / z;
            let im = integrate(|x| f(x).im, -10.0, 10.0, 1e-15, 1e-12).0 / z;
            assert!(re.abs() < 1e-8 && im.abs() < 1e-8, "β={beta}: {re} {im}");
        }
    }

    #[test]
    fn count_examples() {
        let m = model(3.0, 2.0, 1.0, 6);
        let c = ParticleConfiguration::new(vec![-0.7, -0.2, 0.1, 0.4, 0.5, 0.9], &m);
        assert_eq!(
            count_in_interval(&c, f64::NEG_INFINITY, f64::INFINITY).unwrap(),
            6
        );
        assert_eq!(count_in_interval(&c, 0.2, 0.3).unwrap(), 0);
        assert!(count_in_interval(&c, 1.0, 0.0).is_err());
        let mc = c.mirrored(&m);
        let upper = count_in_interval(&mc, 0.0, 1.0).unwrap();
        let lower = mc
            .positions
            .iter()
            .filter(|&&x| (-1.0..0.0).contains(&x))
            .count();
        assert_eq!(upper, 6 - lower);
    }

    #[test]
    fn csv_round_trip() {
        let m = model(3.0, 2.0, 1.0, 4);
        let cfg = SamplerConfig::new(m, 40, 10, 10, 77).unwrap();
        let out = run_chain(&cfg).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&out, &mut buf).unwrap();
        let rows = read_samples_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), out.samples.len());
        for ((seed, sweep, xs), (conf, sw)) in
            rows.iter().zip(out.samples.iter().zip(&out.sweep_indices))
        {
            assert_eq!(*seed, 77);
            assert_eq!(sweep, sw);
            assert_eq!(xs, &conf.positions);
        }
        let header = serde_json::to_value(chain_header(&cfg, &out)).unwrap();
        assert_eq!(header["config"]["model"]["N"], 4);
    }
}
