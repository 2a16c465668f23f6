//! Continuous transfer functions and their zero-order-hold discretizations.
//!
//! Discretization is exact for first- and second-order systems with real
//! poles (including poles at the origin): the discrete denominator comes
//! from the pole map z = e^{sT} and the numerator from matching the
//! continuous step response at the sample instants, which is what a DAC
//! holding its output between samples physically realizes.

use std::collections::VecDeque;
use std::fmt;

use crate::poly::Polynomial;

#[derive(Debug, Clone, PartialEq)]
pub enum LtiError {
    /// deg(num) > deg(den).
    Improper {
        num_degree: usize,
        den_degree: usize,
    },
    ZeroDenominator,
    NonPositivePeriod(f64),
    NegativeDeadTime(f64),
    /// Only first- and second-order denominators have a closed form here.
    UnsupportedOrder(usize),
    /// Complex pole pairs are out of scope for the closed-form path.
    ComplexPoles {
        discriminant: f64,
    },
    /// Discrete denominator must have a0 != 0 so it can be made monic.
    ZeroLeadingDenominator,
}

impl fmt::Display for LtiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LtiError::Improper {
                num_degree,
                den_degree,
            } => write!(
                f,
                "improper transfer function: deg(num) = {num_degree} > deg(den) = {den_degree}"
            ),
            LtiError::ZeroDenominator => write!(f, "denominator is the zero polynomial"),
            LtiError::NonPositivePeriod(p) => write!(f, "sample period must be > 0, got {p}"),
            LtiError::NegativeDeadTime(l) => write!(f, "dead time must be >= 0, got {l}"),
            LtiError::UnsupportedOrder(n) => {
                write!(f, "denominator order {n} not supported (max 2)")
            }
            LtiError::ComplexPoles { discriminant } => write!(
                f,
                "complex pole pair (discriminant {discriminant}) has no real-pole closed form"
            ),
            LtiError::ZeroLeadingDenominator => {
                write!(
                    f,
                    "discrete denominator has a0 = 0, cannot normalize to monic"
                )
            }
        }
    }
}

impl std::error::Error for LtiError {}

/// Proper continuous transfer function num(s)/den(s) · e^{-L·s}, both
/// polynomials in ascending powers of s.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTf {
    num: Polynomial,
    den: Polynomial,
    dead_time_s: f64,
}

impl ContinuousTf {
    pub fn new(num: Polynomial, den: Polynomial, dead_time_s: f64) -> Result<Self, LtiError> {
        if den.is_zero() {
            return Err(LtiError::ZeroDenominator);
        }
        if num.degree() > den.degree() && !num.is_zero() {
            return Err(LtiError::Improper {
                num_degree: num.degree(),
                den_degree: den.degree(),
            });
        }
        if dead_time_s < 0.0 {
            return Err(LtiError::NegativeDeadTime(dead_time_s));
        }
        Ok(Self {
            num,
            den,
            dead_time_s,
        })
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn dead_time_s(&self) -> f64 {
        self.dead_time_s
    }

    /// Static gain num(0)/den(0).
    pub fn dc_gain(&self) -> f64 {
        self.num.eval(0.0) / self.den.eval(0.0)
    }

    /// Zero-order-hold discretization at `period_s`; the dead time is
    /// rounded to a whole number of samples.
    pub fn c2d_zoh(&self, period_s: f64) -> Result<DiscreteLti, LtiError> {
        if period_s <= 0.0 {
            return Err(LtiError::NonPositivePeriod(period_s));
        }
        let delay_d = (self.dead_time_s / period_s).round() as usize;
        let n = self.den.degree();
        let (poles, step_response) = self.real_pole_decomposition()?;

        // Denominator from the pole map; a pole at the origin maps to the
        // factor (1 - q⁻¹) since e^0 = 1.
        let mut a = Polynomial::one();
        for &p in &poles {
            a = &a * &Polynomial::new(vec![1.0, -(p * period_s).exp()]);
        }

        // Numerator by matching the continuous step response at the first
        // n+1 sample instants (triangular recovery, exact for ZOH).
        let ys: Vec<f64> = (0..=n)
            .map(|k| step_response(k as f64 * period_s))
            .collect();
        let mut b = vec![0.0; n + 1];
        for k in 0..=n {
            let mut acc = ys[k];
            for i in 1..=k {
                acc += a.coeff(i) * ys[k - i];
            }
            for bj in b.iter().take(k) {
                acc -= bj;
            }
            b[k] = acc;
        }

        DiscreteLti::new(Polynomial::new(b), a, delay_d, period_s)
    }

    /// Real poles of the denominator plus the unit step response t ↦ y_s(t)
    /// built from the partial-fraction residues of num/(s·den).
    #[allow(clippy::type_complexity)]
    fn real_pole_decomposition(&self) -> Result<(Vec<f64>, Box<dyn Fn(f64) -> f64>), LtiError> {
        let num = self.num.clone();
        let den = self.den.clone();
        match den.degree() {
            0 => {
                let k = num.coeff(0) / den.coeff(0);
                Ok((vec![], Box::new(move |_| k)))
            }
            1 => {
                let (d0, d1) = (den.coeff(0), den.coeff(1));
                let p = -d0 / d1;
                let feed = num.coeff(1) / d1;
                let c = (num.coeff(0) + num.coeff(1) * p) / d1;
                let f: Box<dyn Fn(f64) -> f64> = if p == 0.0 {
                    Box::new(move |t| feed + c * t)
                } else {
                    Box::new(move |t| feed + c / p * ((p * t).exp() - 1.0))
                };
                Ok((vec![p], f))
            }
            2 => {
                let (d0, d1, d2) = (den.coeff(0), den.coeff(1), den.coeff(2));
                let disc = d1 * d1 - 4.0 * d2 * d0;
                let scale = (d1 * d1).max((4.0 * d2 * d0).abs()).max(1e-300);
                if disc < -1e-12 * scale {
                    return Err(LtiError::ComplexPoles { discriminant: disc });
                }
                let sd = disc.max(0.0).sqrt();
                let p1 = (-d1 - sd) / (2.0 * d2);
                let p2 = (-d1 + sd) / (2.0 * d2);
                let feed = num.coeff(2) / d2;
                // Strictly proper remainder after removing the feedthrough.
                let sp = &num - &den.scale(feed);
                let repeated = (p1 - p2).abs() <= 1e-9 * p1.abs().max(p2.abs()).max(1.0);
                if repeated {
                    let p = 0.5 * (p1 + p2);
                    let c2 = sp.eval(p) / d2;
                    let c1 = sp.coeff(1) / d2;
                    let f: Box<dyn Fn(f64) -> f64> = if p == 0.0 {
                        Box::new(move |t| feed + c1 * t + c2 * t * t / 2.0)
                    } else {
                        Box::new(move |t| {
                            let e = (p * t).exp();
                            feed + c1 / p * (e - 1.0) + c2 * ((1.0 - e) / (p * p) + t * e / p)
                        })
                    };
                    Ok((vec![p, p], f))
                } else {
                    let c1 = sp.eval(p1) / (d2 * (p1 - p2));
                    let c2 = sp.eval(p2) / (d2 * (p2 - p1));
                    let term = move |c: f64, p: f64, t: f64| {
                        if p == 0.0 {
                            c * t
                        } else {
                            c / p * ((p * t).exp() - 1.0)
                        }
                    };
                    let f = move |t: f64| feed + term(c1, p1, t) + term(c2, p2, t);
                    Ok((vec![p1, p2], Box::new(f)))
                }
            }
            n => Err(LtiError::UnsupportedOrder(n)),
        }
    }
}

/// Discrete system B(q⁻¹)/A(q⁻¹) · q⁻ᵈ with its difference-equation state.
///
/// `step` evaluates y(t) = −Σ aᵢ·y(t−i) + Σ bⱼ·u(t−d−j), consuming one
/// input sample and producing one output sample. A single instance must not
/// be stepped from two threads at once; everything else is immutable.
#[derive(Debug, Clone)]
pub struct DiscreteLti {
    b: Polynomial,
    a: Polynomial,
    delay_d: usize,
    period_s: f64,
    u_hist: VecDeque<f64>,
    y_hist: VecDeque<f64>,
}

impl DiscreteLti {
    /// `a` is normalized monic (divided through by a0); a0 = 0 is rejected.
    pub fn new(
        b: Polynomial,
        a: Polynomial,
        delay_d: usize,
        period_s: f64,
    ) -> Result<Self, LtiError> {
        if period_s <= 0.0 {
            return Err(LtiError::NonPositivePeriod(period_s));
        }
        let a0 = a.coeff(0);
        if a0.abs() <= 1e-12 {
            return Err(LtiError::ZeroLeadingDenominator);
        }
        let a = a.scale(1.0 / a0);
        let b = b.scale(1.0 / a0);
        let u_len = delay_d + b.degree() + 1;
        let y_len = a.degree();
        Ok(Self {
            b,
            a,
            delay_d,
            period_s,
            u_hist: VecDeque::from(vec![0.0; u_len]),
            y_hist: VecDeque::from(vec![0.0; y_len]),
        })
    }

    pub fn b(&self) -> &Polynomial {
        &self.b
    }

    pub fn a(&self) -> &Polynomial {
        &self.a
    }

    pub fn delay(&self) -> usize {
        self.delay_d
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.eval(1.0) / self.a.eval(1.0)
    }

    pub fn reset(&mut self) {
        self.u_hist.iter_mut().for_each(|v| *v = 0.0);
        self.y_hist.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Place the system at the equilibrium holding output `y0` (input
    /// history set to y0/dc_gain when that gain is finite and nonzero).
    pub fn set_initial_output(&mut self, y0: f64) {
        let g = self.dc_gain();
        let u_eq = if g.is_finite() && g.abs() > 1e-12 {
            y0 / g
        } else {
            0.0
        };
        self.u_hist.iter_mut().for_each(|v| *v = u_eq);
        self.y_hist.iter_mut().for_each(|v| *v = y0);
    }

    /// Advance one sample: consume `u`, produce y(t).
    pub fn step(&mut self, u: f64) -> f64 {
        self.u_hist.push_front(u);
        self.u_hist.pop_back();
        let mut y = 0.0;
        for i in 1..=self.a.degree() {
            y -= self.a.coeff(i) * self.y_hist[i - 1];
        }
        for j in 0..=self.b.degree() {
            y += self.b.coeff(j) * self.u_hist[self.delay_d + j];
        }
        if !self.y_hist.is_empty() {
            self.y_hist.push_front(y);
            self.y_hist.pop_back();
        }
        y
    }
}
