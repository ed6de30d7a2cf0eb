//! Chebyshev interpolation on [0, 1] at Chebyshev–Lobatto points.

use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct ChebSeries {
    /// c_0 already halved, so f(s) = Σ c_j T_j(s), s = 2u - 1.
    pub coeffs: Vec<f64>,
}

/// Lobatto points u_k = (1 + cos(kπ/n))/2, k = 0..=n (decreasing from 1 to 0).
pub fn lobatto_points(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| 0.5 * (1.0 + (k as f64 * PI / n as f64).cos()))
        .collect()
}

impl ChebSeries {
    /// Fits values taken at `lobatto_points(n)`.
    pub fn from_values(vals: &[f64]) -> Self {
        let n = vals.len() - 1;
        let nf = n as f64;
        let mut coeffs = vec![0.0; n + 1];
        for (j, c) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, v) in vals.iter().enumerate() {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                acc += w * v * ((j * k % (2 * n)) as f64 * PI / nf).cos();
            }
            *c = 2.0 * acc / nf;
        }
        coeffs[0] *= 0.5;
        coeffs[n] *= 0.5;
        ChebSeries { coeffs }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let s = 2.0 * u - 1.0;
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * s * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        s * b1 - b2 + self.coeffs[0]
    }

    /// Series of d/du.
    pub fn derivative(&self) -> ChebSeries {
        let n = self.coeffs.len() - 1;
        if n == 0 {
            return ChebSeries { coeffs: vec![0.0] };
        }
        // undo the halving of c_0 for the recurrence
        let mut c = self.coeffs.clone();
        c[0] *= 2.0;
        let mut d = vec![0.0; n + 1];
        for j in (1..=n).rev() {
            let next = if j + 1 <= n { d[j + 1] } else { 0.0 };
            d[j - 1] = next + 2.0 * j as f64 * c[j];
        }
        d[0] *= 0.5;
        // ds/du = 2
        for v in d.iter_mut() {
            *v *= 2.0;
        }
        d.truncate(n.max(1));
        ChebSeries { coeffs: d }
    }

    /// max |c_j| over the last `k` coefficients relative to max |c_j|.
    pub fn tail(&self, k: usize) -> f64 {
        let scale = self
            .coeffs
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
            .max(1e-300);
        let n = self.coeffs.len();
        let k = k.min(n);
        self.coeffs[n - k..]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
            / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_and_differentiates() {
        let u = lobatto_points(32);
        let vals: Vec<f64> = u.iter().map(|&x| (3.0 * x).sin() + x * x).collect();
        let s = ChebSeries::from_values(&vals);
        let d = s.derivative();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert!((s.eval(x) - ((3.0 * x).sin() + x * x)).abs() < 1e-13);
            assert!((d.eval(x) - (3.0 * (3.0 * x).cos() + 2.0 * x)).abs() < 1e-11);
        }
        assert!(s.tail(4) < 1e-14);
    }
}
