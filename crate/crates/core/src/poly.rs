//! Polynomials in the unit-delay operator q⁻¹.
//!
//! Coefficients are stored in ascending powers: `[c0, c1, c2]` is
//! c0 + c1·q⁻¹ + c2·q⁻². All plant and controller polynomials (A, B, R, S,
//! T, P) use this convention, which fixes the index layout of the
//! pole-placement solver.

use std::ops::{Add, Mul, Neg, Sub};

/// Coefficients with magnitude at or below this are treated as zero when
/// normalizing trailing terms.
pub const COEFF_EPS: f64 = 1e-12;

/// Dense real polynomial in q⁻¹, normalized so the last stored coefficient
/// is nonzero (the zero polynomial is stored as `[0.0]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Build from ascending-power coefficients, trimming trailing
    /// near-zeros so equality never observes them.
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        let mut coeffs = coeffs.into();
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.abs() <= COEFF_EPS) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of q⁻ⁱ, zero beyond the stored degree.
    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    /// Index of the last nonzero coefficient; the zero polynomial has
    /// degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0].abs() <= COEFF_EPS
    }

    /// Horner evaluation at x (useful for static gains: `p.eval(1.0)`).
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Multiply by q⁻ᵈ: coefficients shift right by `d`, zeros prepended.
    pub fn shift(&self, d: usize) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut coeffs = vec![0.0; d + self.coeffs.len()];
        coeffs[d..].copy_from_slice(&self.coeffs);
        Self::new(coeffs)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect::<Vec<_>>())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;

    /// Coefficient convolution.
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;

    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.coeff(i) + rhs.coeff(i);
        }
        Polynomial::new(out)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;

    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;

    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}
