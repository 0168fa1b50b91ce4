//! Adaptive Gauss-Legendre integration with explicit error and tail accounting.

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, o: Estimate) -> Estimate {
        Estimate { value: self.value + o.value, error: self.error + o.error }
    }
}

pub struct Integrator {
    rule: GaussLegendre,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self::new(1e-12, 1e-14)
    }
}

impl Integrator {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self { rule: GaussLegendre::new(16).expect("degree >= 2"), rel_tol, abs_tol, max_depth: 40 }
    }

    fn recurse(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> Estimate {
        let m = 0.5 * (a + b);
        let left = self.rule.integrate(a, m, f);
        let right = self.rule.integrate(m, b, f);
        let diff = (left + right - whole).abs();
        if diff <= tol || depth >= self.max_depth || (b - a).abs() < 1e-300 {
            return Estimate { value: left + right, error: diff };
        }
        self.recurse(f, a, m, left, 0.5 * tol, depth + 1) + self.recurse(f, m, b, right, 0.5 * tol, depth + 1)
    }

    /// Integral over [a, b]; the error is the summed bisection discrepancy.
    pub fn integrate(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Estimate {
        let whole = self.rule.integrate(a, b, f);
        let scale = self.rule.integrate(a, b, |x| f(x).abs()).max(whole.abs());
        let tol = (self.rel_tol * scale).max(self.abs_tol);
        self.recurse(f, a, b, whole, tol, 0)
    }

    /// Integral over [a, b] cut into `panels` equal pieces, each refined adaptively.
    pub fn integrate_panels(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> Estimate {
        let n = panels.max(1);
        let h = (b - a) / n as f64;
        (0..n)
            .map(|k| {
                let lo = a + h * k as f64;
                let hi = if k + 1 == n { b } else { lo + h };
                self.integrate(f, lo, hi)
            })
            .fold(Estimate { value: 0.0, error: 0.0 }, |acc, e| acc + e)
    }

    /// Integral over [w, inf) of a non-oscillatory integrand decaying at least as 1/x^2,
    /// via the substitution x = w / u.
    pub fn integrate_tail(&self, f: &dyn Fn(f64) -> f64, w: f64) -> Estimate {
        assert!(w > 0.0);
        let g = |u: f64| if u <= 0.0 { 0.0 } else { f(w / u) * w / (u * u) };
        self.integrate(&g, 0.0, 1.0)
    }
}

/// Fail if the error estimate exceeds `tol`.
pub fn require(e: Estimate, tol: f64) -> Result<Estimate> {
    if e.error.is_finite() && e.value.is_finite() && e.error <= tol {
        Ok(e)
    } else {
        Err(Error::Quadrature { estimate: e.value, error: e.error })
    }
}
