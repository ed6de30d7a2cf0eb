//! Equilibrium measures of the interpolated potentials
//! V_α = α c_p|x|^p + (1-α) 2x² on [-1, 1].

use crate::chebyshev::{lobatto_points, ChebSeries};
use crate::error::{domain, Result};
use crate::quadrature::{self, integrate_breaks, QuadValue};
use crate::special_fn::{c_p_unchecked, digamma_int_minus_half, gamma_signed, lgamma};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

const TOL: f64 = 1e-14;

/// σ(x) = √(1-x²) on [-1, 1], 0 outside.
#[inline]
pub fn sigma(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        ((1.0 - x) * (1.0 + x)).sqrt()
    }
}

/// Parameter bundle of one ensemble P_α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreudModel {
    pub p: f64,
    pub beta: f64,
    pub alpha: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(skip)]
    cp: f64,
}

impl FreudModel {
    pub fn new(p: f64, beta: f64, alpha: f64, n: usize) -> Result<Self> {
        if !(p >= 2.0) || !p.is_finite() {
            return domain(format!("p must be >= 2, got {p}"));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return domain(format!("beta must be > 0, got {beta}"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return domain(format!("alpha must lie in [0, 1], got {alpha}"));
        }
        if n == 0 {
            return domain("N must be at least 1");
        }
        Ok(FreudModel {
            p,
            beta,
            alpha,
            n,
            cp: c_p_unchecked(p),
        })
    }

    /// Same model with a different α (other fields unchanged).
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        FreudModel::new(self.p, self.beta, alpha, self.n)
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        FreudModel::new(self.p, self.beta, self.alpha, n)
    }

    pub fn c_p(&self) -> f64 {
        if self.cp == 0.0 {
            c_p_unchecked(self.p)
        } else {
            self.cp
        }
    }

    /// V_α(x)
    pub fn potential(&self, x: f64) -> f64 {
        self.alpha * self.c_p() * x.abs().powf(self.p) + (1.0 - self.alpha) * 2.0 * x * x
    }

    /// V_α'(x)
    pub fn potential_d1(&self, x: f64) -> f64 {
        let p = self.p;
        self.alpha * p * self.c_p() * x.abs().powf(p - 1.0) * x.signum()
            + (1.0 - self.alpha) * 4.0 * x
    }

    /// V_α''(x); infinite at 0 only when p < 2, which the constructor forbids.
    pub fn potential_d2(&self, x: f64) -> f64 {
        let p = self.p;
        let freud = if p == 2.0 {
            2.0 * self.c_p()
        } else {
            p * (p - 1.0) * self.c_p() * x.abs().powf(p - 2.0)
        };
        self.alpha * freud + (1.0 - self.alpha) * 4.0
    }

    /// ∂_α V_α(x) = c_p|x|^p - 2x².
    pub fn d_alpha_potential(&self, x: f64) -> f64 {
        self.c_p() * x.abs().powf(self.p) - 2.0 * x * x
    }

    /// x V_α'(x) on the real line.
    pub fn g_alpha_real(&self, x: f64) -> f64 {
        x * self.potential_d1(x)
    }
}

/// Constants of the power-series representation of r_1 on (-1, 1).
#[derive(Debug, Clone, Copy)]
pub struct RSeries {
    p: f64,
    a_p: f64,
    b_p: f64,
    skip: Option<usize>,
}

impl RSeries {
    pub fn new(p: f64) -> Self {
        let odd = p == p.round() && (p.round() as i64) % 2 == 1;
        if odd {
            let m = ((p - 1.0) / 2.0).round() as u32;
            let cm = (lgamma(m as f64 + 0.5) - lgamma(m as f64 + 1.0) - 0.5 * PI.ln()).exp();
            RSeries {
                p,
                a_p: 0.5 * cm * digamma_int_minus_half(m),
                b_p: cm,
                skip: Some(m as usize),
            }
        } else if p == p.round() {
            // Γ(1-p/2) has a pole at even p, so the analytic continuation vanishes
            RSeries {
                p,
                a_p: 0.0,
                b_p: 0.0,
                skip: None,
            }
        } else {
            let (l1, s1) = gamma_signed(0.5 * (1.0 - p));
            let (l2, s2) = gamma_signed(1.0 - 0.5 * p);
            let a_p = 0.5 * s1 * s2 * (l1 + 0.5 * PI.ln() - l2).exp();
            RSeries {
                p,
                a_p,
                b_p: 0.0,
                skip: None,
            }
        }
    }

    pub fn a_p(&self) -> f64 {
        self.a_p
    }

    pub fn b_p(&self) -> f64 {
        self.b_p
    }

    /// The bracket |x|^{p-1}(A_p - B_p log|x|) - Σ a_n(p) x^{2n}, so that
    /// r_1 = p·bracket/σ and the Ullman density is p·bracket/π.
    pub fn bracket(&self, x: f64) -> f64 {
        let ax = x.abs();
        let p = self.p;
        let x2 = x * x;
        let mut c = 1.0; // Γ(n+1/2)/(n! Γ(1/2))
        let mut pow = 1.0;
        let mut sum = 0.0;
        let mut n = 0usize;
        loop {
            if self.skip != Some(n) {
                let term = c * pow / (2.0 * n as f64 + 1.0 - p);
                sum += term;
                if term.abs() < 1e-17 * sum.abs().max(1e-300) && n > 4 {
                    break;
                }
            }
            c *= (n as f64 + 0.5) / (n as f64 + 1.0);
            pow *= x2;
            n += 1;
            if n > 100_000 || pow == 0.0 {
                break;
            }
        }
        let head = if ax == 0.0 {
            0.0
        } else {
            ax.powf(p - 1.0) * (self.a_p - self.b_p * ax.ln())
        };
        head - sum
    }

    /// r_1(x) for |x| < 1 from the series.
    pub fn r1(&self, x: f64) -> f64 {
        self.p * self.bracket(x) / sigma(x)
    }
}

/// r_1(x) = (1/2π) ∫ (V'(t)-V'(x))/(t-x) dt/σ(t) for V = c_p|x|^p, by
/// adaptive quadrature in θ (t = cos θ) split at t = 0 and t = x.
pub fn r1_integral(p: f64, x: f64) -> f64 {
    let m = FreudModel {
        p,
        beta: 1.0,
        alpha: 1.0,
        n: 1,
        cp: c_p_unchecked(p),
    };
    let vx = m.potential_d1(x);
    let f = |theta: f64| {
        let t = theta.cos();
        let d = t - x;
        if d.abs() < 1e-7 {
            m.potential_d2(0.5 * (t + x))
        } else {
            (m.potential_d1(t) - vx) / d
        }
    };
    let mut br = vec![FRAC_PI_2];
    if x.abs() < 1.0 {
        br.push(x.acos());
    }
    let (v, _) = integrate_breaks(f, 0.0, PI, &br, 1e-15, TOL);
    v / (2.0 * PI)
}

/// Chebyshev table of r_1 on 0.9 ≤ |x| ≤ 1, cached per p.
fn r1_edge_table(p: f64) -> Arc<ChebSeries> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ChebSeries>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("cache lock").get(&p.to_bits()) {
        return t.clone();
    }
    let vals: Vec<f64> = lobatto_points(EDGE_ORDER)
        .iter()
        .map(|u| r1_integral(p, EDGE + (1.0 - EDGE) * u))
        .collect();
    let table = Arc::new(ChebSeries::from_values(&vals));
    cache
        .lock()
        .expect("cache lock")
        .insert(p.to_bits(), table.clone());
    table
}

const EDGE: f64 = 0.9;
const EDGE_ORDER: usize = 32;

/// Evaluator for r_α on the real line: the series on |x| ≤ 0.9, a cached
/// interpolant of the integral form up to |x| = 1, the integral beyond.
#[derive(Debug, Clone)]
pub struct RAlpha {
    alpha: f64,
    p: f64,
    series: RSeries,
    edge: Option<Arc<ChebSeries>>,
}

impl RAlpha {
    pub fn new(model: &FreudModel) -> Self {
        let freud = model.alpha != 0.0 && model.p != 2.0;
        let edge = if freud {
            Some(r1_edge_table(model.p))
        } else {
            None
        };
        RAlpha {
            alpha: model.alpha,
            p: model.p,
            series: RSeries::new(model.p),
            edge,
        }
    }

    pub fn r1(&self, x: f64) -> f64 {
        if self.p == 2.0 {
            return 2.0;
        }
        let a = x.abs();
        match &self.edge {
            _ if a <= EDGE => self.series.r1(x),
            Some(t) if a <= 1.0 => t.eval((a - EDGE) / (1.0 - EDGE)),
            _ => r1_integral(self.p, x),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.alpha == 0.0 {
            return 2.0;
        }
        self.alpha * self.r1(x) + 2.0 * (1.0 - self.alpha)
    }

    /// Equilibrium density σ r_α/π.
    pub fn density(&self, x: f64) -> f64 {
        if x.abs() >= 1.0 {
            return 0.0;
        }
        sigma(x) * self.eval(x) / PI
    }
}

/// r_α(x) by quadrature of its defining integral.
pub fn r_alpha_real(model: &FreudModel, x: f64) -> f64 {
    if model.alpha == 0.0 {
        return 2.0;
    }
    model.alpha * r1_integral(model.p, x) + 2.0 * (1.0 - model.alpha)
}

/// r_α(x) from the series form on |x| < 1.
pub fn r_alpha_series(model: &FreudModel, x: f64) -> Result<f64> {
    if x.abs() >= 1.0 {
        return domain("series form of r requires |x| < 1");
    }
    Ok(model.alpha * RSeries::new(model.p).r1(x) + 2.0 * (1.0 - model.alpha))
}

/// Ullman density (p|x|^{p-1}/π) ∫_{|x|}^1 y^{-p}(1-y²)^{-1/2} dy.
pub fn ullman_density(p: f64, x: f64) -> f64 {
    let ax = x.abs();
    if ax >= 1.0 {
        return 0.0;
    }
    if ax == 0.0 {
        return p / (PI * (p - 1.0));
    }
    // y = cos θ removes the inverse square root at y = 1
    let top = ax.acos();
    let (v, _) = quadrature::integrate(|th: f64| th.cos().powf(-p), 0.0, top, 0.0, TOL);
    p * ax.powf(p - 1.0) * v / PI
}

/// α·Ullman + (1-α)·semicircle.
pub fn density_alpha(model: &FreudModel, x: f64) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let semi = 2.0 / PI * sigma(x);
    if model.alpha == 0.0 {
        return semi;
    }
    model.alpha * ullman_density(model.p, x) + (1.0 - model.alpha) * semi
}

/// ⟨μ_V, x^{2k}⟩ = 4^{-k} C(2k,k) p/(p+2k).
pub fn equilibrium_moment(p: f64, k: u32) -> f64 {
    let kf = k as f64;
    let central =
        (lgamma(2.0 * kf + 1.0) - 2.0 * lgamma(kf + 1.0) - 2.0 * kf * std::f64::consts::LN_2).exp();
    central * p / (p + 2.0 * kf)
}

/// ⟨μ_{V_α}, x^{2k}⟩ for the mixture.
pub fn equilibrium_moment_alpha(model: &FreudModel, k: u32) -> f64 {
    model.alpha * equilibrium_moment(model.p, k) + (1.0 - model.alpha) * equilibrium_moment(2.0, k)
}

/// ∫ f dμ_{V_α} by adaptive quadrature in θ. `breaks` are extra points of
/// [-1, 1] where f is not smooth.
pub fn integrate_equilibrium<T: QuadValue, F: FnMut(f64) -> T>(
    model: &FreudModel,
    mut f: F,
    breaks: &[f64],
) -> T {
    let r = RAlpha::new(model);
    let g = |th: f64| {
        let t = th.cos();
        let s = th.sin();
        f(t) * (r.eval(t) * s * s / PI)
    };
    let mut br = vec![FRAC_PI_2];
    br.extend(breaks.iter().filter(|b| b.abs() < 1.0).map(|b| b.acos()));
    integrate_breaks(g, 0.0, PI, &br, 1e-15, TOL).0
}

/// ∫_{-1}^1 f(t) dt/σ(t) by adaptive quadrature in θ.
pub fn integrate_arcsine<T: QuadValue, F: FnMut(f64) -> T>(mut f: F, breaks: &[f64]) -> T {
    let mut br = vec![FRAC_PI_2];
    br.extend(breaks.iter().filter(|b| b.abs() < 1.0).map(|b| b.acos()));
    integrate_breaks(|th: f64| f(th.cos()), 0.0, PI, &br, 1e-15, TOL).0
}

/// Ent[μ_{V_α}] = -∫ ρ log ρ dx.
pub fn entropy(model: &FreudModel) -> f64 {
    let r = RAlpha::new(model);
    let g = |th: f64| {
        let s = th.sin();
        let rho = s * r.eval(th.cos()) / PI;
        if rho < 1e-300 {
            0.0
        } else {
            -rho * rho.ln() * s
        }
    };
    integrate_breaks(g, 0.0, PI, &[FRAC_PI_2], 1e-15, 1e-15).0
}

/// ∫_{-1}^x ρ_α.
pub fn equilibrium_cdf(model: &FreudModel, x: f64) -> f64 {
    if x <= -1.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let r = RAlpha::new(model);
    let g = |th: f64| {
        let s = th.sin();
        r.eval(th.cos()) * s * s / PI
    };
    // mass of [x, 1] is the θ-integral over [0, acos x]
    let top = x.acos();
    let upper = if top > FRAC_PI_2 {
        integrate_breaks(g, 0.0, top, &[FRAC_PI_2], 1e-16, TOL).0
    } else {
        integrate_breaks(g, 0.0, top, &[], 1e-16, TOL).0
    };
    (1.0 - upper).clamp(0.0, 1.0)
}

/// Tabulated CDF with monotone cubic interpolation, for bulk quantiles.
#[derive(Debug, Clone)]
pub struct CdfTable {
    xs: Vec<f64>,
    fs: Vec<f64>,
    ds: Vec<f64>,
}

impl CdfTable {
    pub fn new(model: &FreudModel, panels: usize) -> Self {
        let r = RAlpha::new(model);
        let rule = quadrature::gauss_legendre(8);
        // uniform in θ so the square-root edges are resolved
        let mut thetas: Vec<f64> = (0..=panels)
            .map(|i| PI * (1.0 - i as f64 / panels as f64))
            .collect();
        thetas[panels] = 0.0;
        let g = |th: f64| {
            let s = th.sin();
            r.eval(th.cos()) * s * s / PI
        };
        let mut xs = vec![-1.0];
        let mut fs = vec![0.0];
        let mut acc = 0.0;
        for w in thetas.windows(2) {
            let (a, b) = (w[1], w[0]);
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            let piece: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(u, wt)| wt * h * g(c + h * u))
                .sum();
            acc += piece;
            xs.push(a.cos());
            fs.push(acc);
        }
        let total = acc;
        for f in fs.iter_mut() {
            *f /= total;
        }
        let n = xs.len();
        xs[n - 1] = 1.0;
        fs[n - 1] = 1.0;
        let ds = xs.iter().map(|&x| r.density(x) / total).collect();
        let mut t = CdfTable { xs, fs, ds };
        t.limit_slopes();
        t
    }

    // Fritsch–Carlson limiter keeps each cubic piece monotone
    fn limit_slopes(&mut self) {
        for i in 0..self.xs.len() - 1 {
            let delta = (self.fs[i + 1] - self.fs[i]) / (self.xs[i + 1] - self.xs[i]);
            if delta <= 0.0 {
                self.ds[i] = 0.0;
                self.ds[i + 1] = 0.0;
                continue;
            }
            let a = self.ds[i] / delta;
            let b = self.ds[i + 1] / delta;
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                self.ds[i] = tau * a * delta;
                self.ds[i + 1] = tau * b * delta;
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.fs[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.fs[i] + h10 * h * self.ds[i] + h01 * self.fs[i + 1] + h11 * h * self.ds[i + 1]
    }

    /// Inverse CDF by bisection to 1e-12.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let (mut lo, mut hi) = (-1.0, 1.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Which weight a [`QuadratureGrid`] integrates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// dt/σ(t), total mass π
    Arcsine,
    /// dμ_{V_α}, total mass 1
    Equilibrium,
    /// plain dt
    Lebesgue,
}

/// Fixed nodes and weights on (-1, 1).
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub kind: GridKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureGrid {
    pub fn integrate<T: QuadValue, F: FnMut(f64) -> T>(&self, mut f: F) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&x, &w)| acc + f(x) * w)
    }
}

/// Builds a quadrature grid. Equilibrium grids are Gauss–Legendre in θ on
/// each half [0, π/2], [π/2, π], graded cubically towards θ = π/2 (x = 0)
/// where the density has its |x|^{p-1} singularity, and mirrored so the grid
/// is exactly symmetric.
pub fn build_grid(kind: GridKind, order: usize, model: &FreudModel) -> Result<QuadratureGrid> {
    if order < 8 {
        return domain(format!("grid order must be >= 8, got {order}"));
    }
    let (nodes, weights) = match kind {
        GridKind::Arcsine => {
            let r = quadrature::gauss_chebyshev(order);
            (r.nodes, r.weights)
        }
        GridKind::Lebesgue => {
            let r = quadrature::gauss_legendre(order);
            (r.nodes.clone(), r.weights.clone())
        }
        GridKind::Equilibrium => {
            let half = order / 2;
            let rule = quadrature::graded_rule(0.0, FRAC_PI_2, half, 3);
            let r = RAlpha::new(model);
            let mut pos: Vec<(f64, f64)> = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&th, &w)| {
                    let s = th.sin();
                    (th.cos(), w * r.eval(th.cos()) * s * s / PI)
                })
                .collect();
            pos.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut nodes: Vec<f64> = pos.iter().rev().map(|(x, _)| -x).collect();
            let mut weights: Vec<f64> = pos.iter().rev().map(|(_, w)| *w).collect();
            nodes.extend(pos.iter().map(|(x, _)| *x));
            weights.extend(pos.iter().map(|(_, w)| *w));
            (nodes, weights)
        }
    };
    Ok(QuadratureGrid {
        kind,
        order: nodes.len(),
        nodes,
        weights,
    })
}

/// V_α'(x)/2 - PV ∫ dμ_{V_α}(y)/(x-y); vanishes on (-1, 1) for the
/// equilibrium measure. The principal value is handled by subtracting
/// ρ(x) and adding back ρ(x)·log((1+x)/(1-x)).
pub fn effective_potential_check(model: &FreudModel, x: f64) -> Result<f64> {
    if x.abs() >= 1.0 {
        return domain("effective potential check requires |x| < 1");
    }
    let r = RAlpha::new(model);
    let rx = r.density(x);
    let g = |th: f64| {
        let y = th.cos();
        let d = x - y;
        if d.abs() < 1e-9 {
            return 0.0;
        }
        (r.density(y) - rx) / d * th.sin()
    };
    let (v, _) = integrate_breaks(g, 0.0, PI, &[FRAC_PI_2, x.acos()], 1e-14, 1e-13);
    let pv = v + rx * ((1.0 + x) / (1.0 - x)).ln();
    Ok(model.potential_d1(x) / 2.0 - pv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(p: f64, alpha: f64) -> FreudModel {
        FreudModel::new(p, 2.0, alpha, 16).unwrap()
    }

    #[test]
    fn edge_table_matches_integral() {
        for p in [2.5, 3.0, 4.0, 5.5] {
            let r = RAlpha::new(&model(p, 1.0));
            for i in 0..=50 {
                let x = 0.9 + 0.1 * i as f64 / 50.0 - 1e-3 * (i % 3) as f64;
                let want = r1_integral(p, x);
                assert!(
                    (r.r1(x) - want).abs() < 1e-12 * want.abs().max(1.0),
                    "p={p} x={x}"
                );
                assert!((r.r1(-x) - want).abs() < 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn model_validation() {
        assert!(FreudModel::new(1.5, 1.0, 1.0, 4).is_err());
        assert!(FreudModel::new(3.0, 0.0, 1.0, 4).is_err());
        assert!(FreudModel::new(3.0, 1.0, 1.5, 4).is_err());
        assert!(FreudModel::new(3.0, 1.0, 0.5, 0).is_err());
        let m = model(3.0, 0.25);
        let x: f64 = 0.7;
        let v = 0.25 * m.c_p() * x.powi(3) + 0.75 * 2.0 * x * x;
        assert!((m.potential(x) - v).abs() < 1e-15);
        let h = 1e-6;
        let fd = (m.potential(x + h) - m.potential(x - h)) / (2.0 * h);
        assert!((fd - m.potential_d1(x)).abs() < 1e-8);
    }

    #[test]
    fn series_constants_match_brute_force_sums() {
        // partial sums to 2e6 terms plus the n^{-1/2} tail
        assert!((RSeries::new(2.5).a_p() - 0.874_019_184_672_656).abs() < 1e-9);
        assert!((RSeries::new(3.0).a_p() - 0.096_573_590_171_932).abs() < 1e-9);
        assert!(RSeries::new(4.0).a_p().abs() < 1e-12);
        assert!((RSeries::new(5.0).a_p() - 0.041_180_192_535_44).abs() < 1e-9);
    }

    #[test]
    fn ullman_reference_values() {
        assert!((ullman_density(2.0, 0.0) - 2.0 / PI).abs() < 1e-15);
        assert_eq!(ullman_density(2.0, 1.0), 0.0);
        assert_eq!(ullman_density(2.0, -1.0), 0.0);
        let lim = 2.5 / (1.5 * PI);
        let a = ullman_density(2.5, 1e-4);
        let b = ullman_density(2.5, 1e-6);
        assert!((b - lim).abs() < (a - lim).abs());
        assert!((b - lim).abs() < 1e-7);
        for &x in &[0.1, 0.45, 0.8, 0.99] {
            assert!((ullman_density(2.0, x) - 2.0 / PI * sigma(x)).abs() < 1e-13);
        }
        // p = 3, x = 0.5 (mpmath)
        assert!((ullman_density(3.0, 0.5) - 0.570_696_9).abs() < 1e-6);
    }

    #[test]
    fn density_alpha_cases() {
        let m0 = model(3.0, 0.0);
        assert!((density_alpha(&m0, 0.0) - 2.0 / PI).abs() < 1e-15);
        let m1 = model(2.0, 1.0);
        for i in 0..20 {
            let x = -0.95 + 0.1 * i as f64;
            assert!((density_alpha(&m1, x) - ullman_density(2.0, x)).abs() < 1e-15);
        }
        let mh = model(3.0, 0.5);
        let want = 0.5 * (ullman_density(3.0, 0.5) + 2.0 / PI * sigma(0.5));
        assert!((density_alpha(&mh, 0.5) - want).abs() < 1e-15);
    }

    #[test]
    fn r_alpha_reference_values() {
        for &x in &[-2.0, -0.3, 0.0, 0.6, 1.7] {
            assert_eq!(r_alpha_real(&model(3.0, 0.0), x), 2.0);
            assert!((r_alpha_real(&model(2.0, 1.0), x) - 2.0).abs() < 1e-12);
        }
        let m4 = model(4.0, 1.0);
        let q = r_alpha_real(&m4, 0.0);
        assert!(q > 0.0);
        assert!((q - r_alpha_series(&m4, 0.0).unwrap()).abs() < 1e-12);
        assert!((q - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn series_agrees_with_integral() {
        for &p in &[2.0, 2.5, 3.0, 3.7, 4.0, 5.0] {
            for i in 0..=18 {
                let x = -0.9 + 0.1 * i as f64;
                let m = model(p, 1.0);
                let a = r_alpha_real(&m, x);
                let b = r_alpha_series(&m, x).unwrap();
                assert!((a - b).abs() < 1e-8, "p={p} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn density_equals_sigma_r_over_pi() {
        for &p in &[2.5, 3.0, 4.0] {
            for &alpha in &[0.0, 0.5, 1.0] {
                let m = model(p, alpha);
                for i in 1..40 {
                    let x = -0.975 + 0.05 * i as f64;
                    let lhs = density_alpha(&m, x);
                    let rhs = sigma(x) * r_alpha_real(&m, x) / PI;
                    assert!((lhs - rhs).abs() < 1e-8, "p={p} a={alpha} x={x}");
                }
            }
        }
    }

    #[test]
    fn r_is_linear_in_alpha() {
        for &x in &[-2.5, -0.4, 0.2, 0.95, 3.0] {
            let r1 = r_alpha_real(&model(2.5, 1.0), x);
            let rh = r_alpha_real(&model(2.5, 0.3), x);
            assert!((rh - (0.3 * r1 + 0.7 * 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn r_positive_and_growing() {
        for &p in &[2.5, 3.0, 4.0] {
            let m = model(p, 1.0);
            let vals: Vec<(f64, f64)> = (0..=60)
                .map(|i| -3.0 + 0.1 * i as f64)
                .map(|x| (x, r_alpha_real(&m, x)))
                .collect();
            let c = vals
                .iter()
                .map(|(x, r)| r / (1.0 + x.abs().powf(p - 2.0)))
                .fold(f64::INFINITY, f64::min);
            assert!(c > 0.1, "p={p} c={c}");
        }
    }

    #[test]
    fn moments_closed_form() {
        assert!((equilibrium_moment(2.0, 1) - 0.25).abs() < 1e-15);
        assert!((equilibrium_moment(3.7, 0) - 1.0).abs() < 1e-15);
        assert!((equilibrium_moment(3.0, 2) - 9.0 / 56.0).abs() < 1e-15);
        let m = model(3.0, 1.0);
        let q = integrate_equilibrium(&m, |x: f64| x.powi(4), &[]);
        assert!((q - 9.0 / 56.0).abs() < 1e-10);
    }

    #[test]
    fn grid_moments_and_mass() {
        let m = model(3.0, 1.0);
        let g = build_grid(GridKind::Arcsine, 64, &m).unwrap();
        assert!((g.weights.iter().sum::<f64>() - PI).abs() < 1e-13);
        let g0 = build_grid(GridKind::Equilibrium, 256, &model(3.0, 0.0)).unwrap();
        assert!((g0.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for &p in &[2.0, 2.5, 3.0, 4.0, 5.0] {
            for &a in &[0.0, 0.25, 0.5, 1.0] {
                let m = model(p, a);
                let g = build_grid(GridKind::Equilibrium, 256, &m).unwrap();
                assert!(
                    (g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10,
                    "p={p} a={a}"
                );
                let m2: f64 = g.integrate(|x: f64| x * x);
                assert!((m2 - equilibrium_moment_alpha(&m, 1)).abs() < 1e-8);
                assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
                let n = g.nodes.len();
                for i in 0..n / 2 {
                    assert_eq!(g.nodes[i], -g.nodes[n - 1 - i]);
                }
            }
        }
        assert!(build_grid(GridKind::Lebesgue, 4, &m).is_err());
    }

    #[test]
    fn entropy_reference_values() {
        let want = PI.ln() - 0.5;
        assert!((entropy(&model(3.0, 0.0)) - want).abs() < 1e-10);
        assert!((entropy(&model(2.0, 1.0)) - want).abs() < 1e-10);
        // independent high-precision value at p = 3
        assert!((entropy(&model(3.0, 1.0)) - 0.672_712_041_633_447_7).abs() < 1e-8);
    }

    #[test]
    fn cdf_values() {
        let m = model(3.0, 0.7);
        assert!((equilibrium_cdf(&m, 0.0) - 0.5).abs() < 1e-12);
        assert_eq!(equilibrium_cdf(&m, 1.0), 1.0);
        let semi = |x: f64| 0.5 + (x * sigma(x) + x.asin()) / PI;
        let m0 = model(3.0, 0.0);
        assert!((equilibrium_cdf(&m0, 0.5) - semi(0.5)).abs() < 1e-12);
        assert!((semi(0.5) - 0.804_498).abs() < 1e-6);
        let t = CdfTable::new(&m0, 400);
        for i in 0..50 {
            let x = -0.99 + 0.04 * i as f64;
            assert!((t.cdf(x) - semi(x)).abs() < 1e-9, "x={x}");
        }
        let q = t.quantile(0.804_498_0);
        assert!((q - 0.5).abs() < 1e-5);
    }

    #[test]
    fn effective_potential_vanishes() {
        assert!(
            effective_potential_check(&model(3.0, 0.0), 0.3)
                .unwrap()
                .abs()
                < 1e-8
        );
        assert!(
            effective_potential_check(&model(3.0, 1.0), 0.5)
                .unwrap()
                .abs()
                < 1e-6
        );
        assert!(
            effective_potential_check(&model(2.5, 1.0), -0.7)
                .unwrap()
                .abs()
                < 1e-6
        );
    }
}
