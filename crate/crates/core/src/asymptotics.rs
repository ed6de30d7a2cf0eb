//! Closed-form predictors: CLT mean and variance, Gaussian moments,
//! free-energy expansion, Schatten-ball volume coefficients and the KLS
//! ratio.

use crate::equilibrium::{entropy, equilibrium_moment, integrate_equilibrium, FreudModel, RAlpha};
use crate::error::{invalid, Result};
use crate::master_op::{
    a_constant, psi_derivative, tricomi_inverse, InteriorFunction, TestFunction, TricomiKernel,
};
use crate::quadrature::{gauss_chebyshev, gauss_legendre, integrate_breaks};
use crate::special_fn::{c_p, lgamma, log_c_n, schatten_dim};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, LN_2, PI};

/// Order of the double Gauss–Chebyshev rule in [`clt_variance`].
const VARIANCE_ORDER: usize = 512;

/// Limiting law of L_N(f): N(mean, variance), with its first moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltPrediction {
    pub mean: f64,
    pub variance: f64,
    pub moments: Vec<f64>,
}

/// Mean via the master-operator route, variance via the arcsine double
/// integral, and the first `k` moments of the resulting normal law.
pub fn clt_predict(model: &FreudModel, f: &TestFunction, k: usize) -> Result<CltPrediction> {
    let mean = clt_mean_via_psi(model, f)?;
    let variance = clt_variance(f, model.beta);
    let moments = gaussian_moments(mean, variance, k)?;
    Ok(CltPrediction {
        mean,
        variance,
        moments,
    })
}

/// β·σ²(f) = (1/π²)∬ ((f(x)-f(y))/(x-y))² (1-xy) dx dy/(σ(x)σ(y)).
pub fn clt_variance_unit(f: &TestFunction) -> f64 {
    let rule = gauss_chebyshev(VARIANCE_ORDER);
    let xs = &rule.nodes;
    let fx: Vec<f64> = xs.iter().map(|&x| f.f(x)).collect();
    let dfx: Vec<f64> = xs.iter().map(|&x| f.df(x)).collect();
    // rows are reduced independently and summed in index order
    let rows: Vec<f64> = (0..xs.len())
        .into_par_iter()
        .map(|i| {
            let x = xs[i];
            let mut acc = 0.0;
            for (j, &y) in xs.iter().enumerate() {
                let d = x - y;
                let q = if d.abs() < 1e-6 {
                    dfx[i]
                } else {
                    (fx[i] - fx[j]) / d
                };
                acc += q * q * (1.0 - x * y);
            }
            acc
        })
        .collect();
    let w = rule.weights[0];
    rows.iter().sum::<f64>() * w * w / (PI * PI)
}

/// σ²(f) = clt_variance_unit(f)/β.
pub fn clt_variance(f: &TestFunction, beta: f64) -> f64 {
    clt_variance_unit(f) / beta
}

/// σ²(f) through ψ = Ξ_α^{-1}[f]:
/// (2/β)·[½∫V_α''ψ² dμ + ½∬((ψ(x)-ψ(y))/(x-y))² dμ dμ].
pub fn clt_variance_via_psi(model: &FreudModel, f: &TestFunction) -> Result<f64> {
    let psi = tricomi_inverse(model, f);
    let dpsi = psi_derivative(&psi)?;
    let single: f64 = integrate_equilibrium(
        model,
        |x| model.potential_d2(x) * psi.eval(x).powi(2),
        &[0.0],
    );
    let r = RAlpha::new(model);
    // product Gauss–Legendre in θ on each half, x = cos θ
    let gl = gauss_legendre(200);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (a, b) in [(0.0, FRAC_PI_2), (FRAC_PI_2, PI)] {
        for (t, w) in gl.nodes.iter().zip(&gl.weights) {
            let th = 0.5 * (a + b) + 0.5 * (b - a) * t;
            let x = th.cos();
            let s = th.sin();
            nodes.push(x);
            weights.push(0.5 * (b - a) * w * r.eval(x) * s * s / PI);
        }
    }
    let pv: Vec<f64> = nodes.iter().map(|&x| psi.eval(x)).collect();
    let dv: Vec<f64> = nodes.iter().map(|&x| dpsi.eval(x)).collect();
    let mut double = 0.0;
    for i in 0..nodes.len() {
        let mut row = 0.0;
        for j in 0..nodes.len() {
            let d = nodes[i] - nodes[j];
            let q = if d.abs() < 1e-9 {
                dv[i]
            } else {
                (pv[i] - pv[j]) / d
            };
            row += weights[j] * q * q;
        }
        double += weights[i] * row;
    }
    Ok((2.0 / model.beta) * 0.5 * (single + double))
}

/// m_{V_α}(f) = (½ - 1/β) ∫ (Ξ_α^{-1}[f])' dμ_{V_α}.
pub fn clt_mean_via_psi(model: &FreudModel, f: &TestFunction) -> Result<f64> {
    let pref = 0.5 - 1.0 / model.beta;
    if pref == 0.0 {
        return Ok(0.0);
    }
    let psi = tricomi_inverse(model, f);
    let dpsi = psi_derivative(&psi)?;
    let integral: f64 = integrate_equilibrium(model, |x| dpsi.eval(x), &[0.0]);
    Ok(pref * integral)
}

/// The mean rewritten through r_α:
/// (½-1/β)[(1/π²)∫(r'/r)(x)H(x)σ(x)dx - (f(1)+f(-1))/2 + (1/π)∫f dx/σ],
/// with H(x) = ∫(f(t)-f(x))/(t-x) dt/σ(t) and r' by spectral
/// differentiation of r_α.
pub fn clt_mean_via_r(model: &FreudModel, f: &TestFunction) -> Result<f64> {
    let pref = 0.5 - 1.0 / model.beta;
    if pref == 0.0 {
        return Ok(0.0);
    }
    let r = RAlpha::new(model);
    let r_cheb = InteriorFunction::from_fn(|x| r.eval(x), 256);
    let dr = psi_derivative(&r_cheb)?;
    let kernel = TricomiKernel::new(256);
    let g = |th: f64| {
        let x = th.cos();
        let s = th.sin();
        dr.eval(x) / r.eval(x) * kernel.eval(f, x) * s * s
    };
    let integral = integrate_breaks(g, 0.0, PI, &[FRAC_PI_2], 1e-13, 1e-12).0 / (PI * PI);
    Ok(pref * (integral - 0.5 * (f.f(1.0) + f.f(-1.0)) + a_constant(f) / PI))
}

/// First `k` moments of N(mean, variance), by
/// M_j = mean·M_{j-1} + (j-1)·variance·M_{j-2}.
pub fn gaussian_moments(mean: f64, variance: f64, k: usize) -> Result<Vec<f64>> {
    if !(variance >= 0.0) {
        return invalid(format!("variance must be non-negative, got {variance}"));
    }
    if k > 8 {
        return invalid(format!("at most 8 moments are supported, got {k}"));
    }
    let mut m = Vec::with_capacity(k);
    let (mut prev2, mut prev1) = (0.0, 1.0);
    for j in 1..=k {
        let next = mean * prev1 + (j as f64 - 1.0) * variance * prev2;
        m.push(next);
        prev2 = prev1;
        prev1 = next;
    }
    Ok(m)
}

/// Coefficients of (1/(N²β)) log Z_N = leading + nlogn_coeff·log N/N + f_minus1/N + o(1/N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyExpansion {
    pub leading: f64,
    pub nlogn_coeff: f64,
    pub f_minus1: f64,
    pub fg_minus1: f64,
}

impl FreeEnergyExpansion {
    /// log Z_N predicted by the expansion, remainder dropped.
    pub fn log_partition(&self, n: u64, beta: f64) -> f64 {
        let nf = n as f64;
        nf * nf * beta * (self.leading + self.nlogn_coeff * nf.ln() / nf + self.f_minus1 / nf)
    }
}

/// F_G^{-1} for the Gaussian reference potential 2x².
pub fn fg_minus1(beta: f64) -> f64 {
    (0.5 - 1.0 / beta) * ((beta / 2.0).ln() + LN_2) - 1.0 / (2.0 * beta) - 0.25
        + (1.0 / beta) * ((2.0 * PI).ln() - lgamma(beta / 2.0))
}

/// Free-energy coefficients. The N-order constant is
/// F^{-1} = F_G^{-1} - (½ - 1/β)(Ent[μ_V] - log π + ½).
pub fn free_energy_expansion(p: f64, beta: f64) -> Result<FreeEnergyExpansion> {
    let model = FreudModel::new(p, beta, 1.0, 1)?;
    let fg = fg_minus1(beta);
    let ent = entropy(&model);
    Ok(FreeEnergyExpansion {
        leading: -0.5 * (LN_2 + 3.0 / (2.0 * p)),
        nlogn_coeff: 0.5,
        f_minus1: fg - (0.5 - 1.0 / beta) * (ent - PI.ln() + 0.5),
        fg_minus1: fg,
    })
}

/// ∂_α V_α = c_p|x|^p - 2x² as a test function.
pub fn d_alpha_potential_fn(p: f64) -> Result<TestFunction> {
    let c = c_p(p)?;
    Ok(TestFunction::new(
        "d_alpha_V",
        move |x: f64| c * x.abs().powf(p) - 2.0 * x * x,
        move |x: f64| c * p * x.abs().powf(p - 1.0) * x.signum() - 4.0 * x,
        move |x: f64| {
            let k = if p == 2.0 {
                2.0
            } else {
                p * (p - 1.0) * x.abs().powf(p - 2.0)
            };
            c * k - 4.0
        },
    ))
}

/// F^{-1} by the interpolation route:
/// F_G^{-1} - ½∫₀¹ m_{V_α}(∂_α V_α) dα, with `nodes` Gauss–Legendre points in α.
pub fn free_energy_minus1_via_psi(p: f64, beta: f64, nodes: usize) -> Result<f64> {
    let dv = d_alpha_potential_fn(p)?;
    let gl = gauss_legendre(nodes);
    let mut acc = 0.0;
    for (t, w) in gl.nodes.iter().zip(&gl.weights) {
        let model = FreudModel::new(p, beta, 0.5 * (1.0 + t), 1)?;
        acc += 0.5 * w * clt_mean_via_psi(&model, &dv)?;
    }
    Ok(fg_minus1(beta) - 0.5 * acc)
}

/// Coefficients of log|B(S_p^N)| = aN²log N + bN² + cN log N + dN + o(N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchattenCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SchattenCoeffs {
    pub fn log_volume(&self, n: u64) -> f64 {
        let nf = n as f64;
        let l = nf.ln();
        self.a * nf * nf * l + self.b * nf * nf + self.c * nf * l + self.d * nf
    }
}

fn check_beta(beta: u32) -> Result<()> {
    if matches!(beta, 1 | 2 | 4) {
        Ok(())
    } else {
        invalid(format!("beta must be 1, 2 or 4, got {beta}"))
    }
}

pub fn schatten_volume_coeffs(p: f64, beta: u32) -> Result<SchattenCoeffs> {
    check_beta(beta)?;
    let fe = free_energy_expansion(p, beta as f64)?;
    let b = beta as f64;
    let lpc = (p * c_p(p)?).ln();
    let k = 1.0 / p + 0.5;
    Ok(SchattenCoeffs {
        a: -b / 2.0 * k,
        b: b * (lpc / (2.0 * p) + 0.25 * (1.5 + (PI / b).ln()) - 1.0 / (4.0 * p)),
        c: (b - 2.0) / 2.0 * k,
        d: (2.0 - b) / (2.0 * p) * lpc
            + b * fe.f_minus1
            + lgamma(b / 2.0)
            + 0.5
            + b / 4.0 * (1.0 - (PI * b).ln())
            - 0.5 * (4.0 * PI / b).ln(),
    })
}

/// log|B(S_p^N)| = log c_N - lnΓ(1+d_N/p) + (d_N/p)·ln(Nβc_p/2) + log Z_N.
pub fn schatten_log_volume(p: f64, beta: u32, n: u64, log_z: f64) -> Result<f64> {
    check_beta(beta)?;
    let d = schatten_dim(n, beta)? as f64;
    let cp = c_p(p)?;
    let u = d / p;
    Ok(
        log_c_n(n, beta)? - lgamma(1.0 + u)
            + u * ((n as f64) * beta as f64 * cp / 2.0).ln()
            + log_z,
    )
}

/// (2/r)((p+2)/p)((p+2r-2)/p).
pub fn kls_asymptotic_bound(p: f64, r: u32) -> Result<f64> {
    check_kls(p, r)?;
    let rf = r as f64;
    Ok((2.0 / rf) * ((p + 2.0) / p) * ((p + 2.0 * rf - 2.0) / p))
}

fn check_kls(p: f64, r: u32) -> Result<()> {
    if !(p >= 2.0) {
        return invalid(format!("p must be >= 2, got {p}"));
    }
    if r < 2 || r % 2 != 0 {
        return invalid(format!("r must be an even integer >= 2, got {r}"));
    }
    Ok(())
}

/// Upper bound on lim d_N·Var(⟨μ_N,x^r⟩^q):
/// r q² ⟨μ_V,x^r⟩^{2q-2} C(2r-2, r-1)/4^{r-1}.
pub fn kls_variance_limit_bound(p: f64, r: u32, q: f64) -> Result<f64> {
    check_kls(p, r)?;
    let rf = r as f64;
    let mr = equilibrium_moment(p, r / 2);
    let binom = (lgamma(2.0 * rf - 1.0) - 2.0 * lgamma(rf)).exp();
    Ok(rf * q * q * mr.powf(2.0 * q - 2.0) * binom / 4f64.powi(r as i32 - 1))
}

/// Moment inputs of the finite-N KLS ratio, with standard errors.
/// `var_rq` is Var(⟨μ_N,x^r⟩^q) = G_{r,2q} - G_{r,q}², kept separate
/// because the numerator is a near-cancellation of those two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlsMoments {
    pub g_rq: f64,
    pub var_rq: f64,
    pub g21: f64,
    /// E[⟨μ_N,x^r⟩^{2q-2} ⟨μ_N,x^{2r-2}⟩]
    pub mixed: f64,
    pub se_g_rq: f64,
    pub se_var_rq: f64,
    pub se_g21: f64,
    pub se_mixed: f64,
}

impl KlsMoments {
    /// Estimates from i.i.d. replicas of ⟨μ_N,x^r⟩, ⟨μ_N,x²⟩ and ⟨μ_N,x^{2r-2}⟩.
    pub fn from_replicas(m_r: &[f64], m_2: &[f64], m_2r2: &[f64], q: f64) -> Result<KlsMoments> {
        let n = m_r.len();
        if n < 3 || m_2.len() != n || m_2r2.len() != n {
            return invalid("need at least 3 replicas of equal length");
        }
        let nf = n as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / nf;
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nf - 1.0);
        let fq: Vec<f64> = m_r.iter().map(|x| x.powf(q)).collect();
        let mix: Vec<f64> = m_r
            .iter()
            .zip(m_2r2)
            .map(|(a, b)| a.powf(2.0 * q - 2.0) * b)
            .collect();
        let g_rq = mean(&fq);
        let var_rq = var(&fq, g_rq);
        let m4 = fq.iter().map(|x| (x - g_rq).powi(4)).sum::<f64>() / nf;
        let g21 = mean(m_2);
        let mixed = mean(&mix);
        Ok(KlsMoments {
            g_rq,
            var_rq,
            g21,
            mixed,
            se_g_rq: (var_rq / nf).sqrt(),
            se_var_rq: ((m4 - var_rq * var_rq).max(0.0) / nf).sqrt(),
            se_g21: (var(m_2, g21) / nf).sqrt(),
            se_mixed: (var(&mix, mixed) / nf).sqrt(),
        })
    }
}

/// Value of the finite-N ratio bound with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlsRatio {
    pub ratio: f64,
    pub se: f64,
    /// Var - (κ-1)G_{r,q}², the cancelling numerator bracket
    pub numerator: f64,
    pub numerator_se: f64,
    /// set when the numerator is within two standard errors of 0
    pub cancellation: bool,
}

/// lnΓ(u+a) - lnΓ(u) - a ln u. Uses the 1/u expansion for large u, where
/// the direct difference of log-Gamma values loses all relative accuracy.
pub fn lgamma_shift(u: f64, a: f64) -> f64 {
    if u >= 1e3 {
        let a1 = a * (a - 1.0);
        a1 / (2.0 * u) - a1 * (2.0 * a - 1.0) / (12.0 * u * u) + a1 * a1 / (12.0 * u * u * u)
            - a1 * (6.0 * a.powi(3) - 9.0 * a * a + a + 1.0) / (120.0 * u.powi(4))
    } else {
        lgamma(u + a) - lgamma(u) - a * u.ln()
    }
}

/// Right-hand side of the finite-N ratio bound
/// d_N/(rq)² · [G_{r,2q}/(Γ(u)Γ(u+2v₀)) - G_{r,q}²/Γ(u+v₀)²]
///            / [G_{2,1}/Γ(u+v₁) · E[⟨μ_N,x^r⟩^{2q-2}⟨μ_N,x^{2r-2}⟩]/Γ(u+v₂)]
/// with u = 1+d_N/p, v₀ = rq/p, v₁ = 2/p, v₂ = 2(rq-1)/p. Standard errors
/// are propagated to first order, treating the four inputs as independent.
pub fn kls_ratio_finite_n(
    m: &KlsMoments,
    p: f64,
    beta: u32,
    r: u32,
    q: f64,
    n: u64,
) -> Result<KlsRatio> {
    check_kls(p, r)?;
    check_beta(beta)?;
    if q < 1.0 {
        return invalid(format!("q must be >= 1, got {q}"));
    }
    let d = schatten_dim(n, beta)? as f64;
    let rq = r as f64 * q;
    let u = 1.0 + d / p;
    let (v0, v1, v2) = (rq / p, 2.0 / p, 2.0 * (rq - 1.0) / p);
    // v1 + v2 = 2 v0, so the powers of u cancel in the prefactor
    let pref = (lgamma_shift(u, v1) + lgamma_shift(u, v2) - lgamma_shift(u, 2.0 * v0)).exp();
    let kappa_m1 = (lgamma_shift(u, 2.0 * v0) - 2.0 * lgamma_shift(u, v0)).exp_m1();
    let numerator = m.var_rq - kappa_m1 * m.g_rq * m.g_rq;
    let numerator_se = (m.se_var_rq.powi(2) + (2.0 * kappa_m1 * m.g_rq * m.se_g_rq).powi(2)).sqrt();
    let scale = d / (rq * rq) * pref / (m.g21 * m.mixed);
    let ratio = scale * numerator;
    let rel = (numerator_se / numerator).powi(2)
        + (m.se_g21 / m.g21).powi(2)
        + (m.se_mixed / m.mixed).powi(2);
    Ok(KlsRatio {
        ratio,
        se: ratio.abs() * rel.sqrt(),
        numerator,
        numerator_se,
        cancellation: numerator.abs() < 2.0 * numerator_se,
    })
}

/// Limiting moments (law of large numbers values) with the variance set to
/// its upper bound divided by d_N; used as a large-N reference input.
pub fn kls_limit_moments(p: f64, beta: u32, r: u32, q: f64, n: u64) -> Result<KlsMoments> {
    let d = schatten_dim(n, beta)? as f64;
    let mr = equilibrium_moment(p, r / 2);
    Ok(KlsMoments {
        g_rq: mr.powf(q),
        var_rq: kls_variance_limit_bound(p, r, q)? / d,
        g21: equilibrium_moment(p, 1),
        mixed: mr.powf(2.0 * q - 2.0) * equilibrium_moment(p, r - 1),
        se_g_rq: 0.0,
        se_var_rq: 0.0,
        se_g21: 0.0,
        se_mixed: 0.0,
    })
}
