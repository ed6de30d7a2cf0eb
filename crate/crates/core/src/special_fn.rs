//! Scalar special functions and closed-form partition constants.

use crate::error::{domain, invalid, Result};
use std::f64::consts::PI;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

// B_{2k} / (2k (2k-1)) for k = 1..8
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

fn stirling_tail(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    let mut acc = 0.0;
    for c in STIRLING.iter().rev() {
        acc = acc * r2 + c;
    }
    acc * r
}

/// ln Γ(x) for x > 0, NaN otherwise. Upward recurrence to x ≥ 8, then the
/// Stirling series with eight Bernoulli terms (truncation below 1e-16).
pub fn lgamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut y = x;
    let mut prod = 1.0;
    let mut log_shift = 0.0;
    while y < 8.0 {
        prod *= y;
        y += 1.0;
        if prod > 1e250 {
            log_shift += prod.ln();
            prod = 1.0;
        }
    }
    log_shift += prod.ln();
    (y - 0.5) * y.ln() - y + 0.5 * LN_2PI + stirling_tail(y) - log_shift
}

/// ln Γ(x) with a domain check.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return domain(format!("log_gamma requires x > 0, got {x}"));
    }
    Ok(lgamma(x))
}

/// Returns (ln|Γ(x)|, sign Γ(x)) for any real x that is not a non-positive
/// integer. Negative arguments go through the reflection formula.
pub fn gamma_signed(x: f64) -> (f64, f64) {
    if x > 0.0 {
        return (lgamma(x), 1.0);
    }
    if x == x.floor() {
        return (f64::INFINITY, f64::NAN);
    }
    // Γ(x) Γ(1-x) = π / sin(πx)
    let s = (PI * x).sin();
    let lg = PI.ln() - s.abs().ln() - lgamma(1.0 - x);
    (lg, s.signum())
}

/// Γ(x) for real x away from the poles.
pub fn gamma(x: f64) -> f64 {
    let (lg, s) = gamma_signed(x);
    s * lg.exp()
}

/// ψ(m+1) - ψ(m+1/2) for a non-negative integer m.
pub(crate) fn digamma_int_minus_half(m: u32) -> f64 {
    // ψ(m+1) = -γ + H_m,  ψ(m+1/2) = -γ - 2 ln 2 + Σ_{k≤m} 2/(2k-1)
    let mut acc = 2.0 * std::f64::consts::LN_2;
    for k in 1..=m {
        let k = k as f64;
        acc += 1.0 / k - 2.0 / (2.0 * k - 1.0);
    }
    acc
}

/// Normalising constant c_p = Γ(p/2)Γ(1/2)/Γ((p+1)/2), which puts the
/// equilibrium measure of c_p|x|^p on [-1, 1].
pub fn c_p(p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return domain(format!("c_p requires p >= 1, got {p}"));
    }
    Ok(c_p_unchecked(p))
}

pub(crate) fn c_p_unchecked(p: f64) -> f64 {
    (lgamma(0.5 * p) + 0.5 * PI.ln() - lgamma(0.5 * (p + 1.0))).exp()
}

fn check_beta(beta: u32) -> Result<()> {
    match beta {
        1 | 2 | 4 => Ok(()),
        _ => invalid(format!("beta must be one of 1, 2, 4; got {beta}")),
    }
}

/// Real dimension of the space of N×N self-adjoint matrices over ℝ, ℂ or ℍ.
pub fn schatten_dim(n: u64, beta: u32) -> Result<u64> {
    check_beta(beta)?;
    if n == 0 {
        return invalid("N must be at least 1");
    }
    Ok(beta as u64 * n * (n - 1) / 2 + n)
}

/// ln |U_N(F)| = (βN(N+1)/4) ln 2π + N(1-β/2) ln 2 - Σ_k ln Γ(βk/2).
pub fn log_unitary_volume(n: u64, beta: u32) -> Result<f64> {
    check_beta(beta)?;
    let b = beta as f64;
    let nf = n as f64;
    let mut acc =
        b * nf * (nf + 1.0) / 4.0 * LN_2PI + nf * (1.0 - b / 2.0) * std::f64::consts::LN_2;
    for k in 1..=n {
        acc -= lgamma(b * k as f64 / 2.0);
    }
    Ok(acc)
}

/// ln c_N with c_N = |U_N| / (N! |U_1|^N).
pub fn log_c_n(n: u64, beta: u32) -> Result<f64> {
    if n == 0 {
        return invalid("N must be at least 1");
    }
    let un = log_unitary_volume(n, beta)?;
    let u1 = log_unitary_volume(1, beta)?;
    Ok(un - lgamma(n as f64 + 1.0) - n as f64 * u1)
}

/// ln Z_N^G for the weight |Δ(λ)|^β exp(-βN Σ λ_i²) (potential 2x²), via the
/// Mehta–Selberg product after rescaling λ = x/√(2Nβ).
pub fn mehta_log_partition(n: u64, beta: f64) -> Result<f64> {
    if n == 0 {
        return invalid("N must be at least 1");
    }
    if !(beta > 0.0) {
        return domain(format!("beta must be positive, got {beta}"));
    }
    let nf = n as f64;
    let mut acc =
        -(beta * nf * (nf - 1.0) / 4.0 + nf / 2.0) * (2.0 * nf * beta).ln() + nf / 2.0 * LN_2PI;
    let base = lgamma(1.0 + beta / 2.0);
    for j in 1..=n {
        acc += lgamma(1.0 + j as f64 * beta / 2.0) - base;
    }
    Ok(acc)
}
