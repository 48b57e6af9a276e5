//! Classical Hamiltonians, pseudo-Hamiltonians `α(H − E)`, and the first-order
//! mixed generators and slice actions built from them.
//!
//! Momenta live at pseudo-time midpoints: momentum `j` is paired with the
//! coordinates at slices `j` and `j + 1`.

use crate::error::{invalid, Error, Result};
use crate::geometry::{Chart, Point2, ScalingFunction, Units};
use crate::scalar::Real;
use crate::stats::{power_law_fit, PowerLaw};

/// Phase-space point `(q, P, p)`; `P` conjugate to `q1`, `p` to `q2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint<T> {
    pub q: Point2<T>,
    pub big_p: T,
    pub small_p: T,
}

fn zero_potential<T: Real>(_: Point2<T>) -> T {
    T::zero()
}

/// `H = g^ij p_i p_j / 2m + V(q)`.
#[derive(Debug, Clone, Copy)]
pub struct Hamiltonian<T> {
    pub chart: Chart<T>,
    pub units: Units<T>,
    pub potential: fn(Point2<T>) -> T,
}

impl<T: Real> Hamiltonian<T> {
    pub fn free(chart: Chart<T>, units: Units<T>) -> Self {
        Self {
            chart,
            units,
            potential: zero_potential::<T>,
        }
    }

    /// Kinetic part only.
    pub fn kinetic(&self, q: Point2<T>, big_p: T, small_p: T) -> Result<T> {
        let gi = self.chart.metric_inverse(q)?;
        let two_m = T::lit(2.0) * self.units.mass;
        Ok((gi[0][0] * big_p * big_p
            + T::lit(2.0) * gi[0][1] * big_p * small_p
            + gi[1][1] * small_p * small_p)
            / two_m)
    }

    pub fn eval(&self, q: Point2<T>, big_p: T, small_p: T) -> Result<T> {
        Ok(self.kinetic(q, big_p, small_p)? + (self.potential)(q))
    }
}

/// `h(q, p; E) = α(q) (H(q, p) − E)`.
#[derive(Debug, Clone, Copy)]
pub struct PseudoHamiltonian<T> {
    pub base: Hamiltonian<T>,
    pub alpha: ScalingFunction<T>,
    pub energy: T,
}

impl<T: Real> PseudoHamiltonian<T> {
    pub fn new(base: Hamiltonian<T>, alpha: ScalingFunction<T>, energy: T) -> Result<Self> {
        alpha.validate()?;
        if energy < T::zero() || !energy.is_finite() {
            return Err(invalid("E", "pseudo-energy must be a finite value ≥ 0"));
        }
        Ok(Self {
            base,
            alpha,
            energy,
        })
    }

    /// The unscaled Hamiltonian itself (α ≡ 1, E = 0).
    pub fn unscaled(base: Hamiltonian<T>) -> Self {
        Self {
            base,
            alpha: ScalingFunction::unit(),
            energy: T::zero(),
        }
    }

    pub fn chart(&self) -> &Chart<T> {
        &self.base.chart
    }

    pub fn units(&self) -> &Units<T> {
        &self.base.units
    }

    pub fn eval(&self, q: Point2<T>, big_p: T, small_p: T) -> Result<T> {
        let a = self.alpha.eval(&self.base.chart, q)?;
        Ok(a * (self.base.eval(q, big_p, small_p)? - self.energy))
    }

    /// Coefficients of the slice sum `h(q_next) + h(q_prev)` read as a quadratic
    /// form in the momenta: `P² a_big / 2m + p² a_small / 2m + rest`.
    pub fn slice_form(&self, q_next: Point2<T>, q_prev: Point2<T>) -> Result<SliceForm<T>> {
        let chart = &self.base.chart;
        let (a2, a1) = (self.alpha.eval(chart, q_next)?, self.alpha.eval(chart, q_prev)?);
        let (g2, g1) = (chart.metric_inverse(q_next)?, chart.metric_inverse(q_prev)?);
        if g2[0][1] != T::zero() || g1[0][1] != T::zero() {
            return Err(Error::Unsupported("non-diagonal inverse metric".into()));
        }
        let v = |q| (self.base.potential)(q);
        Ok(SliceForm {
            a_big: a2 * g2[0][0] + a1 * g1[0][0],
            a_small: a2 * g2[1][1] + a1 * g1[1][1],
            alpha_sum: a2 + a1,
            potential_sum: a2 * v(q_next) + a1 * v(q_prev),
        })
    }
}

/// Decomposition of `h(q_next, P, p) + h(q_prev, P, p)` into momentum-quadratic
/// coefficients and momentum-independent remainders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceForm<T> {
    pub a_big: T,
    pub a_small: T,
    /// `α(q_next) + α(q_prev)`, the coefficient of `−E`.
    pub alpha_sum: T,
    /// `α V` summed over both endpoints.
    pub potential_sum: T,
}

/// `h = r P²/2m + p²/(2m r) − E r`, the polar free-particle pseudo-Hamiltonian with α = r.
pub fn eval_pseudo_hamiltonian<T: Real>(r: T, big_p: T, small_p: T, energy: T, units: Units<T>) -> Result<T> {
    if !(r > T::zero()) {
        return Err(Error::Domain(format!("r = {r} must be > 0")));
    }
    let two_m = T::lit(2.0) * units.mass;
    Ok(r * big_p * big_p / two_m + small_p * small_p / (two_m * r) - energy * r)
}

/// First-order mixed generators `(S₊₊, S₋₋)` for one slice of width `ε`.
///
/// `S₊₊ = P q2¹ + p q2² − (ε/2) h(q2)`, `S₋₋ = −P q1¹ − p q1² − (ε/2) h(q1)`.
pub fn generators_first_order<T: Real>(
    q2: Point2<T>,
    q1: Point2<T>,
    big_p: T,
    small_p: T,
    eps: T,
    h: &PseudoHamiltonian<T>,
) -> Result<(T, T)> {
    let half = T::lit(0.5) * eps;
    let s_pp = big_p * q2.q1 + small_p * q2.q2 - half * h.eval(q2, big_p, small_p)?;
    let s_mm = -big_p * q1.q1 - small_p * q1.q2 - half * h.eval(q1, big_p, small_p)?;
    Ok((s_pp, s_mm))
}

/// Slice action `P Δq¹ + p Δq² − (ε/2)(h(q_next) + h(q_prev))`.
///
/// The endpoint pseudo-Hamiltonians enter as a sum; the same sum is what the
/// reduced form [`reduced_slice_action`] carries.
pub fn slice_action<T: Real>(
    q_next: Point2<T>,
    q_prev: Point2<T>,
    big_p: T,
    small_p: T,
    eps_eff: T,
    h: &PseudoHamiltonian<T>,
) -> Result<T> {
    if !(eps_eff > T::zero()) {
        return Err(invalid("eps", "effective step must be positive"));
    }
    let (s_pp, s_mm) = generators_first_order(q_next, q_prev, big_p, small_p, eps_eff, h)?;
    Ok(s_pp + s_mm)
}

/// Slice action after the pseudo-energy reduction, with kinetic weight `t/F`:
/// `P Δr + p Δθ − (t/F)(P²(r' + r)/2m + p²(1/r' + 1/r)/2m)`.
pub fn reduced_slice_action<T: Real>(
    q_next: Point2<T>,
    q_prev: Point2<T>,
    big_p: T,
    small_p: T,
    t_over_f: T,
    units: Units<T>,
) -> Result<T> {
    let (r2, r1) = (q_next.q1, q_prev.q1);
    if !(r2 > T::zero() && r1 > T::zero()) {
        return Err(Error::Domain("radii must be > 0".into()));
    }
    let two_m = T::lit(2.0) * units.mass;
    Ok(big_p * (r2 - r1) + small_p * (q_next.q2 - q_prev.q2)
        - t_over_f
            * (big_p * big_p * (r2 + r1) / two_m + small_p * small_p * (r2.recip() + r1.recip()) / two_m))
}

/// Product `D₊₊ · D₋₋` of the mixed-generator determinants at one phase point,
/// obtained by central finite differences of the first-order generators.
///
/// The pair enters the short-time propagator as `√(D₊₊ D₋₋)`.
pub fn d_plusplus<T: Real>(eps: T, at: PhasePoint<T>, h: &PseudoHamiltonian<T>) -> Result<T> {
    let step = T::lit(1e-2);
    let gen = |q: Point2<T>, bp: T, sp: T| generators_first_order(q, q, bp, sp, eps, h);
    // mixed partial ∂²S/∂q^i∂p_j of S₊₊ (selector 0) or S₋₋ (selector 1)
    let mixed = |sel: usize, i: usize, j: usize| -> Result<T> {
        let mut acc = T::zero();
        for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
            let mut q = at.q;
            let d = step * T::lit(si);
            if i == 0 {
                q.q1 = q.q1 + d;
            } else {
                q.q2 = q.q2 + d;
            }
            let (mut bp, mut sp) = (at.big_p, at.small_p);
            let e = step * T::lit(sj);
            if j == 0 {
                bp = bp + e;
            } else {
                sp = sp + e;
            }
            let (spp, smm) = gen(q, bp, sp)?;
            acc = acc + T::lit(sign) * if sel == 0 { spp } else { smm };
        }
        Ok(acc / (T::lit(4.0) * step * step))
    };
    let det = |sel: usize| -> Result<T> {
        Ok(mixed(sel, 0, 0)? * mixed(sel, 1, 1)? - mixed(sel, 0, 1)? * mixed(sel, 1, 0)?)
    };
    // S₋₋ carries −q·p, so its determinant has the sign of (−1)²
    Ok(det(0)? * det(1)?)
}

/// `|D₊₊D₋₋ − 1|` over a sequence of steps with a fitted power law.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterminantStudy {
    pub eps: Vec<f64>,
    pub deviation: Vec<f64>,
    pub fit: PowerLaw,
}

pub fn d_plusplus_study<T: Real>(
    eps: &[T],
    at: PhasePoint<T>,
    h: &PseudoHamiltonian<T>,
) -> Result<DeterminantStudy> {
    let deviation = eps
        .iter()
        .map(|&e| Ok((d_plusplus(e, at, h)? - T::one()).abs().to_f64_lossy()))
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = eps.iter().map(|e| e.to_f64_lossy()).collect();
    let fit = power_law_fit(&eps, &deviation)?;
    Ok(DeterminantStudy { eps, deviation, fit })
}
