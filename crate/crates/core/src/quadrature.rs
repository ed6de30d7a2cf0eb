//! Gauss rules and adaptive Gauss–Kronrod integration.

use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, Mutex, OnceLock};

/// Values that can be integrated: reals and complex numbers.
pub trait QuadValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Nodes and weights of a fixed rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn legendre_rule(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess, then Newton on P_n
        let mut x = ((i as f64 + 0.75) / (nf + 0.5) * PI).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Gauss–Legendre rule with `n` nodes on [-1, 1], nodes increasing. Cached.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(legendre_rule(n)))
        .clone()
}

/// Gauss–Chebyshev rule of the first kind: ∫ f(t) dt/√(1-t²) ≈ (π/n) Σ f(t_j),
/// nodes returned in increasing order.
pub fn gauss_chebyshev(n: usize) -> Rule {
    let nf = n as f64;
    let nodes = (1..=n)
        .rev()
        .map(|j| ((2.0 * j as f64 - 1.0) * PI / (2.0 * nf)).cos())
        .collect();
    Rule {
        nodes,
        weights: vec![PI / nf; n],
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<T: QuadValue, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k = k + s * WGK[j];
        if j % 2 == 1 {
            g = g + s * WG[j / 2];
        }
    }
    let k = k * h;
    let g = g * h;
    (k, (k - g).magnitude())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over [a, b]. Stops when
/// the summed error estimate falls below max(abs_tol, rel_tol·|I|) or when
/// `max_intervals` is reached. Returns (integral, error estimate).
pub fn integrate<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> (T, f64) {
    integrate_with(&mut f, a, b, abs_tol, rel_tol, 2000)
}

pub(crate) fn integrate_with<T: QuadValue, F: FnMut(f64) -> T>(
    f: &mut F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> (T, f64) {
    if a == b {
        return (T::zero(), 0.0);
    }
    let (v, e) = gk15(f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.magnitude()) && pieces.len() < max_intervals {
        // bisect the interval with the largest error
        let (idx, _) =
            pieces.iter().enumerate().fold(
                (0, -1.0),
                |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc },
            );
        let (lo, hi, pv, pe) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            pieces.push((lo, hi, pv, 0.0));
            err -= pe;
            continue;
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        total = total - pv + v1 + v2;
        err += e1 + e2 - pe;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    // re-sum to shed accumulated rounding from the running updates
    let total = pieces.iter().fold(T::zero(), |acc, p| acc + p.2);
    let err = pieces.iter().map(|p| p.3).sum();
    (total, err)
}

/// Adaptive integration over [a, b] split at the interior `breaks`.
pub fn integrate_breaks<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> (T, f64) {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let mut edges = vec![a];
    edges.extend(pts);
    edges.push(b);
    let n = edges.len() - 1;
    let mut total = T::zero();
    let mut err = 0.0;
    for w in edges.windows(2) {
        let (v, e) = integrate_with(&mut f, w[0], w[1], abs_tol / n as f64, rel_tol, 2000);
        total = total + v;
        err += e;
    }
    (total, err)
}

/// Composite Gauss–Legendre rule on [a, b] with `n` nodes, graded towards
/// the endpoint `b` through t = b - (b-a)(1-u)^k, u ∈ [0, 1]. Grading of
/// order k turns an endpoint behaviour |t-b|^s into (1-u)^{ks}.
pub fn graded_rule(a: f64, b: f64, n: usize, k: i32) -> Rule {
    let base = gauss_legendre(n);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (x, w) in base.nodes.iter().zip(&base.weights) {
        let u = 0.5 * (x + 1.0);
        let v = 1.0 - u;
        nodes.push(b - (b - a) * v.powi(k));
        weights.push(0.5 * w * (b - a) * k as f64 * v.powi(k - 1));
    }
    Rule { nodes, weights }
}
