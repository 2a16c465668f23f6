//! RST two-degree-of-freedom control: the feedback pair (R, S) places the
//! closed-loop poles of A·S + q⁻ᵈ·B·R at the roots of a chosen P, and the
//! feedforward T shapes reference tracking. The pole-placement identity is
//! solved as a dense Sylvester system, which is exact at the tiny degrees
//! that occur here.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::poly::Polynomial;

/// Pivot magnitude below which the Sylvester system counts as singular
/// (common factor between A and q⁻ᵈ·B).
const PIVOT_EPS: f64 = 1e-10;

/// Acceptable max-abs coefficient residual of the pole-placement identity.
const RESIDUAL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum RstError {
    /// A and q⁻ᵈ·B share a factor; the offending pivot magnitude is reported.
    SingularSylvester { min_pivot: f64 },
    /// deg(P) exceeds deg(A) + deg(B) + d − 1.
    DegreeTooHigh { p_degree: usize, max_allowed: usize },
    /// B(1) = 0: the plant has no static gain to normalize T against.
    ZeroStaticGain,
    /// A must be monic in the q⁻¹ convention.
    NotMonic { a0: f64 },
    /// P must have a nonzero constant coefficient.
    ZeroLeadingP,
    /// deg(A) ≥ 1 and deg(B) + d ≥ 1 are needed for minimal-degree R and S.
    DegenerateDegrees {
        a_degree: usize,
        b_degree: usize,
        d: usize,
    },
    /// The solve succeeded numerically but the identity does not hold.
    ResidualTooLarge { residual: f64 },
}

impl fmt::Display for RstError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RstError::SingularSylvester { min_pivot } => write!(
                f,
                "singular Sylvester system (pivot {min_pivot:.3e}): A and q^-d B share a factor"
            ),
            RstError::DegreeTooHigh {
                p_degree,
                max_allowed,
            } => write!(
                f,
                "deg(P) = {p_degree} exceeds deg(A)+deg(B)+d-1 = {max_allowed}"
            ),
            RstError::ZeroStaticGain => write!(f, "B(1) = 0, cannot normalize tracking gain"),
            RstError::NotMonic { a0 } => write!(f, "A must be monic, got a0 = {a0}"),
            RstError::ZeroLeadingP => write!(f, "P must have a nonzero constant coefficient"),
            RstError::DegenerateDegrees {
                a_degree,
                b_degree,
                d,
            } => write!(
                f,
                "degenerate degrees: deg(A) = {a_degree}, deg(B) = {b_degree}, d = {d}"
            ),
            RstError::ResidualTooLarge { residual } => {
                write!(
                    f,
                    "pole-placement residual {residual:.3e} exceeds {RESIDUAL_EPS:.0e}"
                )
            }
        }
    }
}

impl std::error::Error for RstError {}

/// Max-abs coefficient of A·S + q⁻ᵈ·B·R − P.
pub fn diophantine_residual(
    a: &Polynomial,
    b: &Polynomial,
    d: usize,
    p: &Polynomial,
    s: &Polynomial,
    r: &Polynomial,
) -> f64 {
    let lhs = &(a * s) + &(b * r).shift(d);
    let diff = &lhs - p;
    diff.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

/// Solve A·S + q⁻ᵈ·B·R = P for the minimal-degree pair
/// deg(S) = deg(B) + d − 1, deg(R) = deg(A) − 1.
///
/// The coefficient-matching equations form a square Sylvester system of
/// size deg(A) + deg(B) + d, solved by LU with partial pivoting.
pub fn solve_diophantine(
    a: &Polynomial,
    b: &Polynomial,
    d: usize,
    p: &Polynomial,
) -> Result<(Polynomial, Polynomial), RstError> {
    let (da, db) = (a.degree(), b.degree());
    if da < 1 || db + d < 1 {
        return Err(RstError::DegenerateDegrees {
            a_degree: da,
            b_degree: db,
            d,
        });
    }
    let n = da + db + d;
    if p.degree() > n - 1 {
        return Err(RstError::DegreeTooHigh {
            p_degree: p.degree(),
            max_allowed: n - 1,
        });
    }

    let n_s = db + d; // s0..s_{dB+d-1}
    let m = DMatrix::from_fn(n, n, |k, j| {
        if j < n_s {
            if k >= j {
                a.coeff(k - j)
            } else {
                0.0
            }
        } else {
            let jr = j - n_s;
            if k >= d + jr {
                b.coeff(k - d - jr)
            } else {
                0.0
            }
        }
    });
    let rhs = DVector::from_fn(n, |k, _| p.coeff(k));

    let lu = m.lu();
    let min_pivot = (0..n)
        .map(|i| lu.u()[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if min_pivot < PIVOT_EPS {
        return Err(RstError::SingularSylvester { min_pivot });
    }
    let x = lu
        .solve(&rhs)
        .ok_or(RstError::SingularSylvester { min_pivot })?;

    let s = Polynomial::new(x.as_slice()[..n_s].to_vec());
    let r = Polynomial::new(x.as_slice()[n_s..].to_vec());
    Ok((s, r))
}

/// How the tracking polynomial T is formed from the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TMode {
    /// T = A·P / B(1). Does not give unity closed-loop static gain.
    PaperLiteral,
    /// T = P / B(1): unity static gain from reference to output.
    UnitDcGain,
}

/// A solved pole placement: plant model, target poles and the three
/// controller polynomials, with the achieved identity residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RstDesign {
    pub a: Polynomial,
    pub b: Polynomial,
    pub d: usize,
    pub p: Polynomial,
    pub r: Polynomial,
    pub s: Polynomial,
    pub t: Polynomial,
    pub t_mode: TMode,
    pub residual: f64,
}

/// Solve the pole placement and build T.
///
/// P is normalized to a unit constant coefficient first (same roots, and T
/// scales with it, so closed-loop behaviour is unchanged); this is what
/// makes the solved S come out monic.
pub fn design_rst(
    a: &Polynomial,
    b: &Polynomial,
    d: usize,
    p: &Polynomial,
    t_mode: TMode,
) -> Result<RstDesign, RstError> {
    if (a.coeff(0) - 1.0).abs() > 1e-9 {
        return Err(RstError::NotMonic { a0: a.coeff(0) });
    }
    if p.coeff(0).abs() <= 1e-12 {
        return Err(RstError::ZeroLeadingP);
    }
    let p = p.scale(1.0 / p.coeff(0));
    let b_static = b.eval(1.0);
    if b_static.abs() <= 1e-12 {
        return Err(RstError::ZeroStaticGain);
    }
    let (s, r) = solve_diophantine(a, b, d, &p)?;
    let residual = diophantine_residual(a, b, d, &p, &s, &r);
    if residual > RESIDUAL_EPS {
        return Err(RstError::ResidualTooLarge { residual });
    }
    let t = match t_mode {
        TMode::PaperLiteral => (a * &p).scale(1.0 / b_static),
        TMode::UnitDcGain => p.scale(1.0 / b_static),
    };
    Ok(RstDesign {
        a: a.clone(),
        b: b.clone(),
        d,
        p,
        r,
        s,
        t,
        t_mode,
        residual,
    })
}

/// Runtime RST law S·u = T·r − R·y, stepped once per controller sample.
#[derive(Debug, Clone)]
pub struct RstController {
    r_poly: Polynomial,
    s_poly: Polynomial,
    t_poly: Polynomial,
    period_s: f64,
    ref_hist: VecDeque<f64>,
    meas_hist: VecDeque<f64>,
    out_hist: VecDeque<f64>,
}

impl RstController {
    pub fn from_design(design: &RstDesign, period_s: f64) -> Self {
        Self::from_polynomials(
            design.r.clone(),
            design.s.clone(),
            design.t.clone(),
            period_s,
        )
    }

    pub fn from_polynomials(
        r_poly: Polynomial,
        s_poly: Polynomial,
        t_poly: Polynomial,
        period_s: f64,
    ) -> Self {
        let ref_hist = VecDeque::from(vec![0.0; t_poly.degree() + 1]);
        let meas_hist = VecDeque::from(vec![0.0; r_poly.degree() + 1]);
        let out_hist = VecDeque::from(vec![0.0; s_poly.degree().max(1)]);
        Self {
            r_poly,
            s_poly,
            t_poly,
            period_s,
            ref_hist,
            meas_hist,
            out_hist,
        }
    }

    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    pub fn reset(&mut self) {
        self.ref_hist.iter_mut().for_each(|v| *v = 0.0);
        self.meas_hist.iter_mut().for_each(|v| *v = 0.0);
        self.out_hist.iter_mut().for_each(|v| *v = 0.0);
    }

    /// u(t) = (T·r − R·y − (S − s0)·u)/s0 over the stored histories.
    pub fn step(&mut self, r_v: f64, y_v: f64) -> f64 {
        self.ref_hist.push_front(r_v);
        self.ref_hist.pop_back();
        self.meas_hist.push_front(y_v);
        self.meas_hist.pop_back();
        let mut acc = 0.0;
        for j in 0..=self.t_poly.degree() {
            acc += self.t_poly.coeff(j) * self.ref_hist[j];
        }
        for j in 0..=self.r_poly.degree() {
            acc -= self.r_poly.coeff(j) * self.meas_hist[j];
        }
        for i in 1..=self.s_poly.degree() {
            acc -= self.s_poly.coeff(i) * self.out_hist[i - 1];
        }
        let u = acc / self.s_poly.coeff(0);
        self.out_hist.push_front(u);
        self.out_hist.pop_back();
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly(c: &[f64]) -> Polynomial {
        Polynomial::new(c.to_vec())
    }

    #[test]
    fn worked_example() {
        // A = 1 − 0.9q⁻¹, B = 0.5q⁻¹, d = 0, P = 1 − 0.6q⁻¹
        let (s, r) = solve_diophantine(
            &poly(&[1.0, -0.9]),
            &poly(&[0.0, 0.5]),
            0,
            &poly(&[1.0, -0.6]),
        )
        .unwrap();
        assert_eq!(s.coeffs().len(), 1);
        assert_abs_diff_eq!(s.coeff(0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.coeff(0), 0.6, epsilon = 1e-12);
        // substitute back: (1−0.9q)·S + q⁰·(0.5q)·R must equal P
        let res = diophantine_residual(
            &poly(&[1.0, -0.9]),
            &poly(&[0.0, 0.5]),
            0,
            &poly(&[1.0, -0.6]),
            &s,
            &r,
        );
        assert!(res <= 1e-9, "residual {res}");
    }

    #[test]
    fn p_equal_a_needs_no_feedback() {
        let a = poly(&[1.0, -0.9]);
        let (s, r) = solve_diophantine(&a, &poly(&[0.0, 0.5]), 0, &a).unwrap();
        assert_abs_diff_eq!(s.coeff(0), 1.0, epsilon = 1e-12);
        assert!(r.is_zero(), "R = {:?}", r);
    }

    #[test]
    fn shared_root_is_singular() {
        // A and B both vanish at q⁻¹ = 1
        let err = solve_diophantine(
            &poly(&[1.0, -1.0]),
            &poly(&[1.0, -1.0]),
            0,
            &poly(&[1.0, -0.6]),
        )
        .unwrap_err();
        assert!(matches!(err, RstError::SingularSylvester { .. }), "{err}");
    }

    #[test]
    fn degree_bound_enforced() {
        let err = solve_diophantine(
            &poly(&[1.0, -0.9]),
            &poly(&[0.0, 0.5]),
            0,
            &poly(&[1.0, -0.6, 0.2]),
        )
        .unwrap_err();
        assert_eq!(
            err,
            RstError::DegreeTooHigh {
                p_degree: 2,
                max_allowed: 1
            }
        );
    }

    #[test]
    fn degenerate_degrees_rejected() {
        assert!(matches!(
            solve_diophantine(&poly(&[1.0]), &poly(&[0.0, 0.5]), 0, &poly(&[1.0])),
            Err(RstError::DegenerateDegrees { .. })
        ));
        assert!(matches!(
            solve_diophantine(&poly(&[1.0, -0.9]), &poly(&[0.5]), 0, &poly(&[1.0])),
            Err(RstError::DegenerateDegrees { .. })
        ));
    }

    #[test]
    fn random_recovery_is_exact() {
        // construct P from known minimal-degree S0, R0 and solve it back
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut done = 0;
        while done < 100 {
            let da = rng.gen_range(1..=3);
            let db = rng.gen_range(1..=3);
            let d = rng.gen_range(0..=3usize);
            let mut a = vec![1.0];
            a.extend((0..da).map(|_| rng.gen_range(-0.9..0.9)));
            let mut b = vec![0.0];
            b.extend((0..db).map(|_| rng.gen_range(-1.0..1.0)));
            let a = poly(&a);
            let b = poly(&b);
            if b.is_zero() || b.degree() != db {
                continue;
            }
            let mut s0 = vec![1.0];
            s0.extend((0..db + d - 1).map(|_| rng.gen_range(-1.0..1.0)));
            let r0: Vec<f64> = (0..da).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (s0, r0) = (poly(&s0), poly(&r0));
            let p = &(&a * &s0) + &(&b * &r0).shift(d);
            let (s, r) = match solve_diophantine(&a, &b, d, &p) {
                Ok(x) => x,
                // a random draw can land on a near-common factor; skip it
                Err(RstError::SingularSylvester { .. }) => continue,
                Err(e) => panic!("unexpected error: {e}"),
            };
            for i in 0..=s0.degree().max(s.degree()) {
                assert_abs_diff_eq!(s.coeff(i), s0.coeff(i), epsilon = 1e-9);
            }
            for i in 0..=r0.degree().max(r.degree()) {
                assert_abs_diff_eq!(r.coeff(i), r0.coeff(i), epsilon = 1e-9);
            }
            done += 1;
        }
    }

    #[test]
    fn design_tracking_modes() {
        let a = poly(&[1.0, -0.9]);
        let b = poly(&[0.0, 0.5]);
        let p = poly(&[1.0, -0.6]);

        let unit = design_rst(&a, &b, 0, &p, TMode::UnitDcGain).unwrap();
        assert_eq!(unit.t.coeffs().len(), 2);
        assert_abs_diff_eq!(unit.t.coeff(0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(unit.t.coeff(1), -1.2, epsilon = 1e-12);
        // closed-loop static gain T(1)·B(1)/P(1) = 1
        let dc = unit.t.eval(1.0) * b.eval(1.0) / p.eval(1.0);
        assert_abs_diff_eq!(dc, 1.0, epsilon = 1e-12);
        assert!(unit.residual <= 1e-9);
        assert_abs_diff_eq!(unit.s.coeff(0), 1.0, epsilon = 1e-9);

        let lit = design_rst(&a, &b, 0, &p, TMode::PaperLiteral).unwrap();
        assert_eq!(lit.t.coeffs().len(), 3);
        assert_abs_diff_eq!(lit.t.coeff(0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lit.t.coeff(1), -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lit.t.coeff(2), 1.08, epsilon = 1e-12);
        // the literal form does not have unity static gain
        let dc = lit.t.eval(1.0) * b.eval(1.0) / p.eval(1.0);
        assert!((dc - 1.0).abs() > 1e-3, "dc = {dc}");
    }

    #[test]
    fn zero_static_gain_rejected() {
        let err = design_rst(
            &poly(&[1.0, -0.9]),
            &poly(&[0.0, 1.0, -1.0]),
            0,
            &poly(&[1.0, -0.6]),
            TMode::UnitDcGain,
        )
        .unwrap_err();
        assert_eq!(err, RstError::ZeroStaticGain);
    }

    #[test]
    fn scaled_p_is_normalized() {
        let a = poly(&[1.0, -0.9]);
        let b = poly(&[0.0, 0.5]);
        let d1 = design_rst(&a, &b, 0, &poly(&[1.0, -0.6]), TMode::UnitDcGain).unwrap();
        let d2 = design_rst(&a, &b, 0, &poly(&[2.0, -1.2]), TMode::UnitDcGain).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn step_zero_histories_zero_inputs() {
        let design = design_rst(
            &poly(&[1.0, -0.9]),
            &poly(&[0.0, 0.5]),
            0,
            &poly(&[1.0, -0.6]),
            TMode::UnitDcGain,
        )
        .unwrap();
        let mut c = RstController::from_design(&design, 1.0);
        for _ in 0..10 {
            assert_eq!(c.step(0.0, 0.0), 0.0);
        }
    }

    #[test]
    fn pass_through_law() {
        let mut c = RstController::from_polynomials(
            Polynomial::zero(),
            Polynomial::one(),
            Polynomial::one(),
            1.0,
        );
        for r in [0.3, -1.0, 2.5, 0.0] {
            assert_eq!(c.step(r, 123.0), r);
        }
    }

    /// Explicit closed-loop recursion: the plant output at sample k is
    /// formed from past samples only, then the controller acts on it within
    /// the same sample. The plant side is hand-unrolled so the controller
    /// is checked against an independent path.
    fn simulate_loop(
        a: &Polynomial,
        b: &Polynomial,
        ctrl: &mut RstController,
        r: impl Fn(usize) -> f64,
        u0: Option<f64>,
        n: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut y = vec![0.0; n];
        let mut u = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for i in 1..=a.degree() {
                if k >= i {
                    acc -= a.coeff(i) * y[k - i];
                }
            }
            for j in 0..=b.degree() {
                if k >= j {
                    acc += b.coeff(j) * u[k - j];
                }
            }
            y[k] = acc;
            u[k] = match (k, u0) {
                (0, Some(prime)) => prime,
                _ => ctrl.step(r(k), y[k]),
            };
        }
        (y, u)
    }

    #[test]
    fn closed_loop_regulation_decays_at_designed_pole() {
        // prime the plant to y = 1 with one open-loop sample, then regulate
        // to zero: the transient must decay by the factor P places
        let a = poly(&[1.0, -0.9]);
        let b = poly(&[0.0, 0.5]);
        let p = poly(&[1.0, -0.6]);
        let design = design_rst(&a, &b, 0, &p, TMode::UnitDcGain).unwrap();
        let mut ctrl = RstController::from_design(&design, 1.0);
        let (y, _) = simulate_loop(&a, &b, &mut ctrl, |_| 0.0, Some(2.0), 12);
        assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-12);
        for k in 2..12 {
            assert_abs_diff_eq!(y[k] / y[k - 1], 0.6, epsilon = 1e-9);
        }
    }

    #[test]
    fn closed_loop_tracks_step_exactly_after_deadbeat() {
        // for this design q⁻ᵈ·B·T/P collapses to a pure delay, so tracking
        // is exact from the second sample
        let a = poly(&[1.0, -0.9]);
        let b = poly(&[0.0, 0.5]);
        let design = design_rst(&a, &b, 0, &poly(&[1.0, -0.6]), TMode::UnitDcGain).unwrap();
        let mut ctrl = RstController::from_design(&design, 1.0);
        let (y, _) = simulate_loop(&a, &b, &mut ctrl, |_| 1.0, None, 50);
        for yk in y.iter().skip(1) {
            assert_abs_diff_eq!(*yk, 1.0, epsilon = 1e-12);
        }
    }
}
