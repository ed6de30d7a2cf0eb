//! Complex-plane objects: b(z), the pseudo-analytic extension of g, h_α,
//! r_α(z) and the equilibrium Stieltjes transform with its conjugate root.

use crate::equilibrium::{integrate_equilibrium, FreudModel};
use crate::error::{domain, invalid, Result};
use crate::quadrature::integrate_breaks;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

pub type ComplexPoint = Complex64;

/// b(z) = √(z+1)·√(z-1) with principal square roots.
pub fn branch_b(z: Complex64) -> Complex64 {
    (z + 1.0).sqrt() * (z - 1.0).sqrt()
}

/// Smooth even cutoff: 1 on [-1/2, 1/2], 0 outside (-1, 1).
pub fn chi_cutoff(t: f64) -> f64 {
    let a = t.abs();
    if a <= 0.5 {
        return 1.0;
    }
    if a >= 1.0 {
        return 0.0;
    }
    let u = 2.0 * (1.0 - a);
    let e0 = (-1.0 / u).exp();
    let e1 = (-1.0 / (1.0 - u)).exp();
    e0 / (e0 + e1)
}

/// Derivatives g, g', g'', g''' of g(x) = p c_p |x|^p at a real point.
fn g_derivs(p: f64, cp: f64, x: f64) -> [f64; 4] {
    let a = x.abs();
    let s = x.signum();
    let k = p * cp;
    let g0 = k * a.powf(p);
    let g1 = k * p * a.powf(p - 1.0) * s;
    let g2 = if p == 2.0 {
        k * 2.0
    } else {
        k * p * (p - 1.0) * a.powf(p - 2.0)
    };
    let g3 = if p == 2.0 || x == 0.0 {
        0.0
    } else {
        k * p * (p - 1.0) * (p - 2.0) * a.powf(p - 3.0) * s
    };
    [g0, g1, g2, g3]
}

fn g_pseudo(p: f64, cp: f64, z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    let [g0, g1, g2, g3] = g_derivs(p, cp, x);
    let cubic = if x == 0.0 {
        0.0
    } else {
        y * y * y / 6.0 * g3 * chi_cutoff(y / x)
    };
    Complex64::new(g0 - 0.5 * y * y * g2, y * g1 - cubic)
}

/// Pseudo-analytic extension of g(x) = p c_p|x|^p = xV'(x):
/// g + iy g' - y²/2 g'' - i y³/6 g''' χ(y/x), last term 0 at x = 0.
pub fn g_complex(p: f64, z: Complex64) -> Result<Complex64> {
    if !(p >= 2.0) {
        return domain(format!("g requires p >= 2, got {p}"));
    }
    Ok(g_pseudo(p, crate::special_fn::c_p_unchecked(p), z))
}

/// g_α(z) = α g(z) + 4(1-α) z².
pub fn g_alpha_complex(model: &FreudModel, z: Complex64) -> Complex64 {
    let quad = z * z * (4.0 * (1.0 - model.alpha));
    if model.alpha == 0.0 {
        return quad;
    }
    g_pseudo(model.p, model.c_p(), z) * model.alpha + quad
}

/// f_{α,z}(λ) = (g_α(λ) - g_α(z))/(λ - z).
pub fn f_alpha_z(model: &FreudModel, z: Complex64, lambda: f64) -> Result<Complex64> {
    if z.im == 0.0 {
        return invalid("f_{alpha,z} needs a non-real z");
    }
    let gz = g_alpha_complex(model, z);
    Ok(f_with(model, gz, z, lambda))
}

#[inline]
fn f_with(model: &FreudModel, gz: Complex64, z: Complex64, lambda: f64) -> Complex64 {
    (Complex64::new(model.g_alpha_real(lambda), 0.0) - gz) / (lambda - z)
}

fn breaks_for(z: Complex64) -> Vec<f64> {
    let mut b = vec![0.0];
    if z.re.abs() < 1.0 {
        b.push(z.re);
    }
    b
}

/// h_α(z) = ∫ f_{α,z} dμ_{V_α}.
pub fn h_alpha(model: &FreudModel, z: Complex64) -> Result<Complex64> {
    if z.im == 0.0 && z.re.abs() <= 1.0 {
        return domain("h_alpha needs z off [-1, 1]");
    }
    let gz = g_alpha_complex(model, z);
    Ok(integrate_equilibrium(
        model,
        |t| f_with(model, gz, z, t),
        &breaks_for(z),
    ))
}

/// r_1(z) for the pure Freud part: (1/2πz) ∫ (g(t)-g(z))/(t-z) dt/σ(t).
fn r1_complex(model: &FreudModel, z: Complex64) -> Complex64 {
    let p = model.p;
    let cp = model.c_p();
    if z.norm() < 1e-10 {
        // continuous extension at 0: (1/2π) ∫ p c_p |t|^{p-2} dt/σ
        let (v, _) = integrate_breaks(
            |th: f64| p * cp * th.cos().abs().powf(p - 2.0),
            0.0,
            PI,
            &[FRAC_PI_2],
            1e-15,
            1e-14,
        );
        return Complex64::new(v / (2.0 * PI), 0.0);
    }
    let gz = g_pseudo(p, cp, z);
    let integrand = |th: f64| {
        let t = th.cos();
        (Complex64::new(p * cp * t.abs().powf(p), 0.0) - gz) / (t - z)
    };
    let mut br = vec![FRAC_PI_2];
    if z.re.abs() < 1.0 {
        br.push(z.re.acos());
    }
    let (v, _) = integrate_breaks(integrand, 0.0, PI, &br, 1e-15, 1e-14);
    v / (z * (2.0 * PI))
}

/// r_α(z) = (1/2πz) ∫ (g_α(t)-g_α(z))/(t-z) dt/σ(t) = α r_1(z) + 2(1-α).
pub fn r_alpha_complex(model: &FreudModel, z: Complex64) -> Complex64 {
    if model.alpha == 0.0 {
        return Complex64::new(2.0, 0.0);
    }
    r1_complex(model, z) * model.alpha + 2.0 * (1.0 - model.alpha)
}

fn check_off_support(z: Complex64) -> Result<()> {
    if z.im == 0.0 && z.re.abs() <= 1.0 {
        return domain("z must lie off [-1, 1]");
    }
    Ok(())
}

/// s_{V_α}(z) = r_α(z) b(z) - g_α(z)/(2z).
pub fn s_v(model: &FreudModel, z: Complex64) -> Result<Complex64> {
    check_off_support(z)?;
    Ok(r_alpha_complex(model, z) * branch_b(z) - g_alpha_complex(model, z) / (2.0 * z))
}

/// The other root, -r_α(z) b(z) - g_α(z)/(2z).
pub fn s_v_tilde(model: &FreudModel, z: Complex64) -> Result<Complex64> {
    check_off_support(z)?;
    Ok(-r_alpha_complex(model, z) * branch_b(z) - g_alpha_complex(model, z) / (2.0 * z))
}

/// |s² + (g_α/z) s + h_α/z| at s = s_{V_α}(z).
pub fn quadratic_residual(model: &FreudModel, z: Complex64) -> Result<f64> {
    let s = s_v(model, z)?;
    let g = g_alpha_complex(model, z);
    let h = h_alpha(model, z)?;
    Ok((s * s + g / z * s + h / z).norm())
}

/// Rectangle [-1-δ₀, 1+δ₀] × (0, δ₀] sampled on an nx × ny grid, with the
/// trapezoid {|x| ≤ 1 + y} as a mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDomain {
    pub delta0: f64,
    pub nx: usize,
    pub ny: usize,
}

impl SpectralDomain {
    pub fn new(delta0: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(delta0 > 0.0) || nx < 2 || ny < 1 {
            return invalid("spectral domain needs delta0 > 0, nx >= 2, ny >= 1");
        }
        Ok(SpectralDomain { delta0, nx, ny })
    }

    pub fn points(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        let lo = -1.0 - self.delta0;
        let w = 2.0 + 2.0 * self.delta0;
        for j in 1..=self.ny {
            let y = self.delta0 * j as f64 / self.ny as f64;
            for i in 0..self.nx {
                let x = lo + w * i as f64 / (self.nx - 1) as f64;
                out.push(Complex64::new(x, y));
            }
        }
        out
    }

    pub fn in_trapezoid(z: Complex64) -> bool {
        z.im > 0.0 && z.re.abs() <= 1.0 + z.im
    }

    pub fn in_rectangle(&self, z: Complex64) -> bool {
        z.im > 0.0 && z.im <= self.delta0 && z.re.abs() <= 1.0 + self.delta0
    }

    /// κ = min(|x-1|, |x+1|).
    pub fn kappa(z: Complex64) -> f64 {
        (z.re - 1.0).abs().min((z.re + 1.0).abs())
    }
}
