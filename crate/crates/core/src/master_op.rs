//! The master operator Ξ_α, its Tricomi inverse on [-1, 1] and spectral
//! differentiation of the inverse.

use crate::chebyshev::{lobatto_points, ChebSeries};
use crate::equilibrium::{integrate_equilibrium, FreudModel, RAlpha};
use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_chebyshev;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A test function with its first derivatives.
#[derive(Clone)]
pub struct TestFunction {
    pub label: String,
    f: RealFn,
    df: RealFn,
    d2f: RealFn,
    d3f: Option<RealFn>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(fm, "TestFunction({})", self.label)
    }
}

impl TestFunction {
    pub fn new<F, D1, D2>(label: &str, f: F, df: D1, d2f: D2) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction {
            label: label.to_string(),
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
            d3f: None,
        }
    }

    pub fn with_d3<D3: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, d3f: D3) -> Self {
        self.d3f = Some(Arc::new(d3f));
        self
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    #[inline]
    pub fn df(&self, x: f64) -> f64 {
        (self.df)(x)
    }
    #[inline]
    pub fn d2f(&self, x: f64) -> f64 {
        (self.d2f)(x)
    }
    pub fn d3f(&self, x: f64) -> Option<f64> {
        self.d3f.as_ref().map(|g| g(x))
    }

    /// a·self + b·other.
    pub fn combine(&self, a: f64, other: &TestFunction, b: f64) -> TestFunction {
        let (s1, s2) = (self.clone(), other.clone());
        let (t1, t2) = (self.clone(), other.clone());
        let (u1, u2) = (self.clone(), other.clone());
        TestFunction::new(
            &format!("{a}*{}+{b}*{}", self.label, other.label),
            move |x| a * s1.f(x) + b * s2.f(x),
            move |x| a * t1.df(x) + b * t2.df(x),
            move |x| a * u1.d2f(x) + b * u2.d2f(x),
        )
    }

    pub fn constant(c: f64) -> TestFunction {
        TestFunction::new("const", move |_| c, |_| 0.0, |_| 0.0).with_d3(|_| 0.0)
    }

    /// Built-in functions: x, x2, x3, x4, cos, exp-window.
    pub fn registry(name: &str) -> Result<TestFunction> {
        let tf = match name {
            "x" => TestFunction::new("x", |x| x, |_| 1.0, |_| 0.0).with_d3(|_| 0.0),
            "x2" => TestFunction::new("x2", |x| x * x, |x| 2.0 * x, |_| 2.0).with_d3(|_| 0.0),
            "x3" => TestFunction::new("x3", |x| x * x * x, |x| 3.0 * x * x, |x| 6.0 * x)
                .with_d3(|_| 6.0),
            "x4" => TestFunction::new("x4", |x| x.powi(4), |x| 4.0 * x.powi(3), |x| 12.0 * x * x)
                .with_d3(|x| 24.0 * x),
            "cos" => {
                TestFunction::new("cos", f64::cos, |x| -x.sin(), |x| -x.cos()).with_d3(f64::sin)
            }
            // Gaussian window exp(-4x²)
            "exp-window" => TestFunction::new(
                "exp-window",
                |x| (-4.0 * x * x).exp(),
                |x| -8.0 * x * (-4.0 * x * x).exp(),
                |x| (64.0 * x * x - 8.0) * (-4.0 * x * x).exp(),
            )
            .with_d3(|x| (192.0 * x - 512.0 * x * x * x) * (-4.0 * x * x).exp()),
            other => return invalid(format!("unknown test function '{other}'")),
        };
        Ok(tf)
    }

    pub fn registry_names() -> &'static [&'static str] {
        &["x", "x2", "x3", "x4", "cos", "exp-window"]
    }
}

/// A function on [-1, 1] stored as two Chebyshev series, one per half, in
/// the variable u = √|λ|. The square-root grading absorbs the |λ|^{p-1}
/// behaviour of r_α at the origin, so the coefficients decay fast even for
/// non-integer p.
#[derive(Debug, Clone)]
pub struct InteriorFunction {
    pub pos: ChebSeries,
    pub neg: ChebSeries,
    /// values at the Lobatto points of each half (u decreasing from 1 to 0)
    pub pos_values: Vec<f64>,
    pub neg_values: Vec<f64>,
}

impl InteriorFunction {
    /// Samples `f` at the Lobatto points of each half.
    pub fn from_fn<F: Fn(f64) -> f64>(f: F, order: usize) -> Self {
        let us = lobatto_points(order);
        let pos_values: Vec<f64> = us.iter().map(|&u| f(u * u)).collect();
        let neg_values: Vec<f64> = us.iter().map(|&u| f(-u * u)).collect();
        InteriorFunction {
            pos: ChebSeries::from_values(&pos_values),
            neg: ChebSeries::from_values(&neg_values),
            pos_values,
            neg_values,
        }
    }

    pub fn order(&self) -> usize {
        self.pos.coeffs.len() - 1
    }

    /// Interior nodes λ = ±u² (excluding ±1 and 0) with their values.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let us = lobatto_points(self.order());
        let mut out = Vec::new();
        for (k, &u) in us.iter().enumerate() {
            if u <= 0.0 || u >= 1.0 {
                continue;
            }
            out.push((-u * u, self.neg_values[k]));
            out.push((u * u, self.pos_values[k]));
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x.abs().min(1.0).sqrt();
        if x >= 0.0 {
            self.pos.eval(u)
        } else {
            self.neg.eval(u)
        }
    }

    /// Relative size of the trailing coefficients.
    pub fn tail(&self) -> f64 {
        let k = (self.order() / 16).max(3);
        self.pos.tail(k).max(self.neg.tail(k))
    }
}

/// d/dλ via Chebyshev differentiation in u: ψ'(λ) = ±Ψ'(u)/(2u), with the
/// limit Ψ''(0)/2 at the origin.
pub fn psi_derivative(psi: &InteriorFunction) -> Result<InteriorFunction> {
    if psi.tail() > 1e-6 {
        return Err(Error::Resolution(format!(
            "Chebyshev tail {:.2e} exceeds 1e-6",
            psi.tail()
        )));
    }
    let dp = psi.pos.derivative();
    let dn = psi.neg.derivative();
    let d2p = dp.derivative();
    let d2n = dn.derivative();
    let f = move |x: f64| {
        let u = x.abs().sqrt();
        if u < 1e-6 {
            // both halves share the same limit; average them
            0.25 * (d2p.eval(0.0) - d2n.eval(0.0))
        } else if x >= 0.0 {
            dp.eval(u) / (2.0 * u)
        } else {
            -dn.eval(u) / (2.0 * u)
        }
    };
    Ok(InteriorFunction::from_fn(f, psi.order()))
}

/// Ξ_α[ψ] as a callable.
pub struct XiForward<'a> {
    model: FreudModel,
    psi: &'a TestFunction,
}

impl XiForward<'_> {
    /// -½ψ(x)V_α'(x) + ∫ (ψ(x)-ψ(t))/(x-t) dμ_{V_α}(t).
    pub fn eval(&self, x: f64) -> f64 {
        let px = self.psi.f(x);
        let dpx = self.psi.df(x);
        let q = |t: f64| {
            let d = x - t;
            if d.abs() < 1e-7 {
                dpx
            } else {
                (px - self.psi.f(t)) / d
            }
        };
        let integral: f64 = integrate_equilibrium(&self.model, q, &[0.0, x]);
        -0.5 * px * self.model.potential_d1(x) + integral
    }
}

pub fn xi_forward<'a>(model: &FreudModel, psi: &'a TestFunction) -> XiForward<'a> {
    XiForward { model: *model, psi }
}

/// Arcsine-weighted Tricomi integral H(λ) = ∫ (f(t)-f(λ))/(t-λ) dt/σ(t) by
/// Gauss–Chebyshev, switching to f'(λ) when |t-λ| < 1e-7.
pub struct TricomiKernel {
    nodes: Vec<f64>,
    w: f64,
}

impl TricomiKernel {
    pub fn new(order: usize) -> Self {
        let r = gauss_chebyshev(order);
        TricomiKernel {
            w: r.weights[0],
            nodes: r.nodes,
        }
    }

    pub fn eval(&self, f: &TestFunction, lambda: f64) -> f64 {
        let fl = f.f(lambda);
        let dfl = f.df(lambda);
        let mut acc = 0.0;
        for &t in &self.nodes {
            let d = t - lambda;
            acc += if d.abs() < 1e-7 {
                dfl
            } else {
                (f.f(t) - fl) / d
            };
        }
        acc * self.w
    }
}

/// ψ_α = Ξ_α^{-1}[f] on [-1, 1]:
/// ψ(λ) = -(1/(π r_α(λ))) ∫ (f(t)-f(λ))/(t-λ) dt/σ(t).
/// The order starts at 256 and doubles up to 2048 until the Chebyshev tail
/// drops below 1e-10.
pub fn tricomi_inverse(model: &FreudModel, f: &TestFunction) -> InteriorFunction {
    let kernel = TricomiKernel::new(256);
    let r = RAlpha::new(model);
    let psi = |l: f64| -kernel.eval(f, l) / (PI * r.eval(l));
    let mut order = 256;
    loop {
        let out = InteriorFunction::from_fn(psi, order);
        if out.tail() < 1e-10 || order >= 2048 {
            return out;
        }
        order *= 2;
    }
}

/// a = ∫ f(t) dt/σ(t) by Gauss–Chebyshev.
pub fn a_constant(f: &TestFunction) -> f64 {
    let r = gauss_chebyshev(256);
    r.nodes.iter().map(|&t| f.f(t)).sum::<f64>() * r.weights[0]
}

/// Wraps an [`InteriorFunction`] as a [`TestFunction`] (value, ψ', ψ'').
pub fn interior_as_test_function(psi: &InteriorFunction, label: &str) -> Result<TestFunction> {
    let d1 = psi_derivative(psi)?;
    let d2 = psi_derivative(&d1).unwrap_or_else(|_| d1.clone());
    let p0 = psi.clone();
    Ok(TestFunction::new(
        label,
        move |x| p0.eval(x),
        move |x| d1.eval(x),
        move |x| d2.eval(x),
    ))
}

/// Outcome of Ξ_α[Ξ_α^{-1}[f]] - f over interior nodes.
#[derive(Debug, Clone, Copy)]
pub struct RoundTrip {
    /// mean of Ξ[ψ] - f over the nodes
    pub constant: f64,
    /// standard deviation of Ξ[ψ] - f over the nodes
    pub stdev: f64,
    /// -a/π, the predicted constant
    pub predicted: f64,
    pub nodes: usize,
}

/// Evaluates the round trip on every `stride`-th interior Chebyshev node.
pub fn round_trip(model: &FreudModel, f: &TestFunction, stride: usize) -> Result<RoundTrip> {
    let psi = tricomi_inverse(model, f);
    let psi_tf = interior_as_test_function(&psi, "psi")?;
    let xi = xi_forward(model, &psi_tf);
    let nodes = psi.nodes();
    let diffs: Vec<f64> = nodes
        .iter()
        .step_by(stride.max(1))
        .map(|&(x, _)| xi.eval(x) - f.f(x))
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(RoundTrip {
        constant: mean,
        stdev: var.sqrt(),
        predicted: -a_constant(f) / PI,
        nodes: diffs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(p: f64, alpha: f64) -> FreudModel {
        FreudModel::new(p, 1.0, alpha, 8).unwrap()
    }

    #[test]
    fn registry_derivatives_are_consistent() {
        let h = 1e-5;
        for name in TestFunction::registry_names() {
            let tf = TestFunction::registry(name).unwrap();
            for i in 0..=20 {
                let x = -1.0 + 0.1 * i as f64;
                let fd = (tf.f(x + h) - tf.f(x - h)) / (2.0 * h);
                assert!((fd - tf.df(x)).abs() < 1e-8, "{name} at {x}");
                let fd2 = (tf.df(x + h) - tf.df(x - h)) / (2.0 * h);
                assert!((fd2 - tf.d2f(x)).abs() < 1e-7, "{name}'' at {x}");
                let fd3 = (tf.d2f(x + h) - tf.d2f(x - h)) / (2.0 * h);
                assert!((fd3 - tf.d3f(x).unwrap()).abs() < 1e-6, "{name}''' at {x}");
            }
        }
        assert!(TestFunction::registry("sin").is_err());
    }

    #[test]
    fn xi_forward_gaussian_examples() {
        let m0 = model(3.0, 0.0);
        let half = TestFunction::constant(-0.5);
        let xi = xi_forward(&m0, &half);
        for &x in &[-0.8, 0.1, 0.6] {
            assert!((xi.eval(x) - x).abs() < 1e-12);
        }
        let lin = TestFunction::new("-x/2", |x| -0.5 * x, |_| -0.5, |_| 0.0);
        let xi = xi_forward(&m0, &lin);
        for &x in &[-0.8, 0.1, 0.6] {
            assert!((xi.eval(x) - (x * x - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn xi_forward_is_linear() {
        let m = model(2.5, 1.0);
        let f1 = TestFunction::registry("cos").unwrap();
        let f2 = TestFunction::registry("x3").unwrap();
        let (a, b) = (0.37, -1.9);
        let comb = f1.combine(a, &f2, b);
        for &x in &[-0.5, 0.2, 0.9] {
            let lhs = xi_forward(&m, &comb).eval(x);
            let rhs = a * xi_forward(&m, &f1).eval(x) + b * xi_forward(&m, &f2).eval(x);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn tricomi_gaussian_examples() {
        let m0 = model(3.0, 0.0);
        let psi = tricomi_inverse(&m0, &TestFunction::registry("x").unwrap());
        for (x, v) in psi.nodes() {
            assert!((v + 0.5).abs() < 1e-12, "{x}");
        }
        let psi = tricomi_inverse(&m0, &TestFunction::registry("x2").unwrap());
        for (x, v) in psi.nodes() {
            assert!((v + 0.5 * x).abs() < 1e-12, "{x}");
        }
        for i in 0..=40 {
            let x = -1.0 + 0.05 * i as f64;
            assert!((psi.eval(x) + 0.5 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn a_constant_values() {
        assert!((a_constant(&TestFunction::constant(1.0)) - PI).abs() < 1e-13);
        assert!(a_constant(&TestFunction::registry("x").unwrap()).abs() < 1e-13);
        assert!((a_constant(&TestFunction::registry("x2").unwrap()) - PI / 2.0).abs() < 1e-13);
    }

    #[test]
    fn derivative_examples() {
        let c = InteriorFunction::from_fn(|_| -0.5, 64);
        let d = psi_derivative(&c).unwrap();
        for i in 0..=20 {
            assert!(d.eval(-1.0 + 0.1 * i as f64).abs() < 1e-10);
        }
        let l = InteriorFunction::from_fn(|x| -0.5 * x, 64);
        let d = psi_derivative(&l).unwrap();
        for i in 0..=20 {
            assert!((d.eval(-1.0 + 0.1 * i as f64) + 0.5).abs() < 1e-9);
        }
        let m0 = model(3.0, 0.0);
        let psi = tricomi_inverse(&m0, &TestFunction::registry("x3").unwrap());
        let d = psi_derivative(&psi).unwrap();
        let h = 1e-5;
        for i in 1..20 {
            let x = -0.95 + 0.1 * i as f64;
            let fd = (psi.eval(x + h) - psi.eval(x - h)) / (2.0 * h);
            assert!((fd - d.eval(x)).abs() < 1e-6, "x={x}");
        }
        let rough = InteriorFunction::from_fn(|x: f64| if x > 0.3 { 1.0 } else { 0.0 }, 32);
        assert!(psi_derivative(&rough).is_err());
    }

    #[test]
    fn round_trip_constant_is_minus_a_over_pi() {
        for (p, alpha) in [(2.5, 1.0), (3.0, 0.5)] {
            let m = model(p, alpha);
            for name in ["x2", "x3", "cos"] {
                let f = TestFunction::registry(name).unwrap();
                let rt = round_trip(&m, &f, 8).unwrap();
                assert!(rt.stdev < 1e-6, "p={p} a={alpha} {name}: {rt:?}");
                assert!((rt.constant - rt.predicted).abs() < 1e-6, "{rt:?}");
            }
        }
    }

    #[test]
    fn inverse_is_linear_and_respects_parity() {
        let m = model(2.5, 1.0);
        let f = TestFunction::registry("cos").unwrap();
        let g = TestFunction::registry("x3").unwrap();
        let pf = tricomi_inverse(&m, &f);
        let pg = tricomi_inverse(&m, &g);
        let pc = tricomi_inverse(&m, &f.combine(2.0, &g, -0.5));
        for ((x, a), ((_, b), (_, c))) in pf
            .nodes()
            .into_iter()
            .zip(pg.nodes().into_iter().zip(pc.nodes()))
        {
            assert!((c - (2.0 * a - 0.5 * b)).abs() < 1e-9, "x={x}");
        }
        for i in 0..=20 {
            let x = 0.05 * i as f64;
            // even f gives odd ψ and vice versa
            assert!((pf.eval(x) + pf.eval(-x)).abs() < 1e-9);
            assert!((pg.eval(x) - pg.eval(-x)).abs() < 1e-9);
        }
    }

    #[test]
    fn second_derivative_growth_near_origin() {
        // |ψ''(λ)| ≲ 1 + |λ|^{p-3} for p < 3
        let p = 2.5;
        let m = model(p, 1.0);
        let psi = tricomi_inverse(&m, &TestFunction::registry("x2").unwrap());
        let d2 = psi_derivative(&psi_derivative(&psi).unwrap()).unwrap();
        let xs = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| (d2.eval(x) - d2.eval(0.3)).abs().ln())
            .collect();
        let lx: Vec<f64> = xs.iter().map(|x: &f64| x.ln()).collect();
        let mx = lx.iter().sum::<f64>() / 5.0;
        let my = ys.iter().sum::<f64>() / 5.0;
        let slope = lx
            .iter()
            .zip(&ys)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum::<f64>()
            / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
        assert!(slope >= (p - 3.0) - 0.3, "slope {slope}");
    }
}
