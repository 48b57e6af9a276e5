//! Exact Euclidean free-particle kernels used as references: the Cartesian heat
//! kernel, its polar form, the angular-momentum (modified Bessel) series, and
//! image sums over single-sheet kernels.

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, Units};
use crate::quad;
use crate::scalar::Real;

/// `(m / 2πħτ) exp(−m |x − x0|² / 2ħτ)`.
pub fn heat_kernel_cartesian<T: Real>(x: Point2<T>, x0: Point2<T>, tau: T, units: Units<T>) -> Result<T> {
    if !(tau > T::zero()) {
        return Err(invalid("tau", "must be positive"));
    }
    let (dx, dy) = (x.q1 - x0.q1, x.q2 - x0.q2);
    Ok(heat_from_distance_sq(dx * dx + dy * dy, tau, units))
}

pub(crate) fn heat_from_distance_sq<T: Real>(d2: T, tau: T, units: Units<T>) -> T {
    let s = units.mass / (units.hbar * tau);
    s / T::TAU() * (-T::lit(0.5) * s * d2).exp()
}

/// The Cartesian heat kernel written in polar coordinates via the law of cosines.
pub fn free_polar_kernel<T: Real>(r: T, theta: T, r0: T, theta0: T, tau: T, units: Units<T>) -> Result<T> {
    if !(r > T::zero() && r0 > T::zero()) {
        return Err(Error::Domain("radii must be > 0".into()));
    }
    if !(tau > T::zero()) {
        return Err(invalid("tau", "must be positive"));
    }
    let d2 = r * r + r0 * r0 - T::lit(2.0) * r * r0 * (theta - theta0).cos();
    Ok(heat_from_distance_sq(d2.max(T::zero()), tau, units))
}

/// Exponentially scaled modified Bessel functions `e^{−x} I_l(x)` for `l = 0..=l_max`,
/// plus the scaled tail mass `Σ_{l > l_max} e^{−x} I_l(x)`.
///
/// Miller's backward recurrence normalised with `I_0 + 2 Σ_{l≥1} I_l = e^x`.
pub fn scaled_bessel_i(l_max: usize, x: f64) -> Result<(Vec<f64>, f64)> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(invalid("x", "Bessel argument must be finite and ≥ 0"));
    }
    let mut out = vec![0.0; l_max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return Ok((out, 0.0));
    }
    let start = l_max + 24 + (14.0 * x.sqrt()).ceil() as usize;
    let mut upper = 0.0f64; // I_{l+1}
    let mut cur = 1e-300f64; // I_l at l = start
    let mut vals = vec![0.0; start + 1];
    vals[start] = cur;
    for l in (1..=start).rev() {
        let lower = 2.0 * l as f64 / x * cur + upper;
        upper = cur;
        cur = lower;
        vals[l - 1] = cur;
        if cur > 1e250 {
            for v in vals.iter_mut().skip(l - 1) {
                *v *= 1e-250;
            }
            cur *= 1e-250;
            upper *= 1e-250;
        }
    }
    let norm = vals[0] + 2.0 * vals[1..].iter().sum::<f64>();
    for (l, o) in out.iter_mut().enumerate() {
        *o = vals[l] / norm;
    }
    let tail = vals[l_max + 1..].iter().sum::<f64>() / norm;
    Ok((out, tail))
}

/// Bessel-series evaluation with its truncation tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Upper bound on the omitted `|l| > l_max` terms.
    pub tail: f64,
}

/// `(m/2πħτ) e^{−m(r² + r0²)/2ħτ} Σ_{|l| ≤ l_max} e^{il(θ−θ0)} I_l(m r r0/ħτ)`.
pub fn bessel_series_kernel(
    r: f64,
    theta: f64,
    r0: f64,
    theta0: f64,
    tau: f64,
    l_max: usize,
    units: Units<f64>,
) -> Result<SeriesValue> {
    if !(r > 0.0 && r0 > 0.0) {
        return Err(Error::Domain("radii must be > 0".into()));
    }
    if !(tau > 0.0) {
        return Err(invalid("tau", "must be positive"));
    }
    let s = units.mass / (units.hbar * tau);
    let x = s * r * r0;
    let (ie, tail) = scaled_bessel_i(l_max, x)?;
    let dth = theta - theta0;
    let sum = ie[0] + 2.0 * (1..=l_max).map(|l| ie[l] * (l as f64 * dth).cos()).sum::<f64>();
    let pref = s / std::f64::consts::TAU * (-0.5 * s * (r - r0) * (r - r0)).exp();
    Ok(SeriesValue {
        value: pref * sum,
        tail: pref * 2.0 * tail,
    })
}

/// A kernel on one sheet of the angular cover, `K(r, φ; r0)` with unwrapped `φ = θ − θ0`.
pub trait SheetKernel {
    fn eval(&self, r: f64, phi: f64, r0: f64, tau: f64) -> Result<f64>;

    /// Estimate of `Σ_{|m| > M} K(r, φ + 2πm; r0)`, the images outside the window.
    fn image_tail(&self, _r: f64, _phi: f64, _r0: f64, _tau: f64, _m_max: usize) -> Result<f64> {
        Ok(0.0)
    }
}

/// The law-of-cosines kernel itself; already 2π-periodic in `φ`, so every image
/// repeats it.
#[derive(Debug, Clone, Copy)]
pub struct PlaneSheet {
    pub units: Units<f64>,
}

impl SheetKernel for PlaneSheet {
    fn eval(&self, r: f64, phi: f64, r0: f64, tau: f64) -> Result<f64> {
        let d2 = r * r + r0 * r0 - 2.0 * r * r0 * phi.cos();
        Ok(heat_from_distance_sq(d2.max(0.0), tau, self.units))
    }
}

/// Free kernel on the universal cover of the punctured plane (angle unwrapped).
///
/// `K = (s/2π) e^{−s(r² + r0²)/2} [e^{x cos φ} 𝟙(|φ| < π) − (1/π) ∫₀^∞ e^{−x cosh u}
/// ((π + φ)/(u² + (π + φ)²) + (π − φ)/(u² + (π − φ)²)) du]`, with `s = m/ħτ`, `x = s r r0`.
/// Summing it over `φ + 2πm` gives the plane kernel. At negative `r` only the
/// principal term is continued through the distance formula.
#[derive(Debug, Clone, Copy)]
pub struct CoverSheet {
    pub units: Units<f64>,
    pub rel_tol: f64,
}

impl CoverSheet {
    pub fn new(units: Units<f64>) -> Self {
        Self {
            units,
            rel_tol: 1e-12,
        }
    }
}

impl SheetKernel for CoverSheet {
    fn eval(&self, r: f64, phi: f64, r0: f64, tau: f64) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(invalid("tau", "must be positive"));
        }
        if r0 <= 0.0 || r == 0.0 {
            return Err(Error::Domain("radii must be nonzero (r0 > 0)".into()));
        }
        let pi = std::f64::consts::PI;
        let s = self.units.mass / (self.units.hbar * tau);
        let pref = s / std::f64::consts::TAU;
        let principal = if phi.abs() < pi {
            1.0
        } else if phi.abs() == pi {
            0.5
        } else {
            0.0
        };
        let d2 = r * r + r0 * r0 - 2.0 * r * r0 * phi.cos();
        let lead = principal * (-0.5 * s * d2).exp();
        if r < 0.0 {
            return Ok(pref * lead);
        }
        let x = s * r * r0;
        let base = -0.5 * s * (r * r + r0 * r0);
        // the correction is below e^{−s(r + r0)²/2}; skip it when negligible
        let bound = (base - x).exp();
        if bound < 1e-300 {
            return Ok(pref * lead);
        }
        let (a, b) = (pi + phi, pi - phi);
        let corr = quad::integrate_to_infinity(
            |u| {
                let w = a / (u * u + a * a) + b / (u * u + b * b);
                (base - x * u.cosh()).exp() * w
            },
            0.0,
            self.rel_tol,
            1e-300,
        )?;
        Ok(pref * (lead - corr / pi))
    }

    /// Far images have no principal term and their correction integral behaves as
    /// `(2/(φ² − π²)) e^{−s(r² + r0²)/2} K₀(x)`; the sum of that leading form over
    /// `|m| > M` telescopes to a closed expression.
    fn image_tail(&self, r: f64, phi: f64, r0: f64, tau: f64, m_max: usize) -> Result<f64> {
        if r <= 0.0 {
            return Ok(0.0);
        }
        let pi = std::f64::consts::PI;
        let s = self.units.mass / (self.units.hbar * tau);
        let x = s * r * r0;
        let base = -0.5 * s * (r * r + r0 * r0);
        if (base - x).exp() < 1e-300 {
            return Ok(0.0);
        }
        let k0 = quad::integrate_to_infinity(|u| (base - x * u.cosh()).exp(), 0.0, self.rel_tol, 1e-300)?;
        let m = m_max as f64;
        // Σ_{|m'| ≤ M} 1/(φ_m'² − π²); the symmetric sum over all m' vanishes
        let inside = (1.0 / (phi - pi - 2.0 * pi * m) - 1.0 / (phi + pi + 2.0 * pi * m)) / (2.0 * pi);
        let pref = s / std::f64::consts::TAU;
        Ok(-pref * 2.0 * k0 * inside)
    }
}

/// Image-sum evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSum {
    /// Truncated sum plus the sheet's tail estimate.
    pub value: f64,
    /// Plain truncated sum over `|m| ≤ M`.
    pub truncated: f64,
    /// Magnitude of the tail estimate added to `truncated`.
    pub tail: f64,
}

/// `Σ_{m=−M}^{M} [K(r, φ + 2πm; r0) + K(−r, φ + 2π(2m+1); r0)]` with `φ` the
/// relative angle `θ − θ0` reduced to `(−π, π]`.
pub fn image_sum_kernel(
    base: &impl SheetKernel,
    r: f64,
    theta: f64,
    r0: f64,
    theta0: f64,
    tau: f64,
    m_max: usize,
) -> Result<ImageSum> {
    let tau2 = std::f64::consts::TAU;
    // θ and θ0 label points of the plane, so the windings count from the principal
    // relative angle in (−π, π]
    let mut phi = (theta - theta0).rem_euclid(tau2);
    if phi > std::f64::consts::PI {
        phi -= tau2;
    }
    let mut truncated = 0.0;
    let mm = m_max as i64;
    for m in -mm..=mm {
        let direct = base.eval(r, phi + tau2 * m as f64, r0, tau)?;
        let reflected = base.eval(-r, phi + tau2 * (2 * m + 1) as f64, r0, tau)?;
        truncated += direct + reflected;
    }
    let tail = base.image_tail(r, phi, r0, tau, m_max)?;
    Ok(ImageSum {
        value: truncated + tail,
        truncated,
        tail: tail.abs(),
    })
}

/// Which exact representation to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Representation {
    CartesianClosedForm,
    PolarTransform,
    BesselSeries { l_max: usize },
    ImageSum { m_max: usize },
}

/// Default truncations for the series and image representations.
pub const DEFAULT_L_MAX: usize = 64;
pub const DEFAULT_M_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactKernelSpec {
    pub units: Units<f64>,
    pub tau: f64,
    pub representation: Representation,
}

impl ExactKernelSpec {
    /// Kernel between two polar points.
    pub fn eval(&self, q: Point2<f64>, q0: Point2<f64>) -> Result<f64> {
        let (r, th, r0, th0) = (q.q1, q.q2, q0.q1, q0.q2);
        match self.representation {
            Representation::CartesianClosedForm => heat_kernel_cartesian(
                q.polar_to_cartesian(),
                q0.polar_to_cartesian(),
                self.tau,
                self.units,
            ),
            Representation::PolarTransform => free_polar_kernel(r, th, r0, th0, self.tau, self.units),
            Representation::BesselSeries { l_max } => {
                Ok(bessel_series_kernel(r, th, r0, th0, self.tau, l_max, self.units)?.value)
            }
            Representation::ImageSum { m_max } => Ok(image_sum_kernel(
                &CoverSheet::new(self.units),
                r,
                th,
                r0,
                th0,
                self.tau,
                m_max,
            )?
            .value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn u() -> Units<f64> {
        Units::default()
    }

    /// Independent power series `I_l(x) = Σ_k (x/2)^{2k+l} / (k! (k+l)!)`.
    fn bessel_power_series(l: usize, x: f64) -> f64 {
        let mut term = (0.5 * x).powi(l as i32) / (1..=l).map(|k| k as f64).product::<f64>();
        let mut sum = term;
        for k in 1..200 {
            term *= 0.25 * x * x / (k as f64 * (k + l) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    #[test]
    fn heat_kernel_examples() {
        let o = Point2::new(0.0, 0.0);
        assert_relative_eq!(
            heat_kernel_cartesian(o, o, 1.0, u()).unwrap(),
            0.159_154_943_091_895_35,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            heat_kernel_cartesian(Point2::new(1.0, 0.0), o, 1.0, u()).unwrap(),
            0.096_532_352_630_053_9,
            max_relative = 1e-14
        );
    }

    #[test]
    fn heat_kernel_is_normalised() {
        let x0 = Point2::new(0.3, -0.2);
        let tau = 0.7;
        let inner = |x: f64| {
            quad::integrate(
                |y| heat_kernel_cartesian(Point2::new(x, y), x0, tau, u()).unwrap(),
                -12.0,
                12.0,
                1e-13,
                0.0,
            )
            .unwrap()
        };
        let total = quad::integrate(inner, -12.0, 12.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(total, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn polar_kernel_coincident_and_rotations() {
        let tau = 0.4;
        let k = free_polar_kernel(1.3, 0.7, 1.3, 0.7, tau, u()).unwrap();
        assert_relative_eq!(k, 1.0 / (std::f64::consts::TAU * tau), max_relative = 1e-14);
        let a = free_polar_kernel(1.1, 0.2, 2.0, 1.5, tau, u()).unwrap();
        let b = free_polar_kernel(1.1, 0.2 + 0.9, 2.0, 1.5 + 0.9, tau, u()).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn law_of_cosines_matches_cartesian_battery() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let q = Point2::polar(rng.random_range(0.1..3.0), rng.random_range(0.0..6.28));
            let q0 = Point2::polar(rng.random_range(0.1..3.0), rng.random_range(0.0..6.28));
            let tau = rng.random_range(0.2..2.0);
            let a = free_polar_kernel(q.q1, q.q2, q0.q1, q0.q2, tau, u()).unwrap();
            let b = heat_kernel_cartesian(q.polar_to_cartesian(), q0.polar_to_cartesian(), tau, u())
                .unwrap();
            assert!((a - b).abs() <= 1e-14 * b.max(1e-300) + 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn scaled_bessel_matches_power_series() {
        for &x in &[1e-3, 0.1, 1.0, 4.0, 12.0, 30.0] {
            let (ie, _) = scaled_bessel_i(20, x).unwrap();
            for l in 0..=20 {
                let want = bessel_power_series(l, x) * (-x).exp();
                assert!(
                    (ie[l] - want).abs() <= 1e-13 * want + 1e-300,
                    "l={l} x={x}: {} vs {want}",
                    ie[l]
                );
            }
        }
    }

    #[test]
    fn scaled_bessel_matches_integral_representation_at_large_argument() {
        // I_l(x) = (1/π) ∫₀^π e^{x cos t} cos(l t) dt
        for &x in &[50.0, 200.0, 800.0] {
            let (ie, _) = scaled_bessel_i(10, x).unwrap();
            for l in [0usize, 1, 5, 10] {
                let want = quad::integrate(
                    |t| (x * (t.cos() - 1.0)).exp() * (l as f64 * t).cos(),
                    0.0,
                    std::f64::consts::PI,
                    1e-14,
                    0.0,
                )
                .unwrap()
                    / std::f64::consts::PI;
                assert_relative_eq!(ie[l], want, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn bessel_series_matches_closed_form() {
        let v = bessel_series_kernel(1.0, 0.4, 1.0, 0.0, 0.5, 40, u()).unwrap();
        let want = free_polar_kernel(1.0, 0.4, 1.0, 0.0, 0.5, u()).unwrap();
        assert!((v.value - want).abs() <= 1e-10);
        for dth in [0.0, std::f64::consts::PI] {
            let v = bessel_series_kernel(1.2, dth, 0.8, 0.0, 0.5, 64, u()).unwrap();
            let want = free_polar_kernel(1.2, dth, 0.8, 0.0, 0.5, u()).unwrap();
            assert!((v.value - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn zeroth_bessel_term_is_angular_average() {
        let (r, r0, tau) = (1.1, 0.9, 0.5);
        let v = bessel_series_kernel(r, 0.0, r0, 0.0, tau, 0, u()).unwrap();
        let avg = quad::integrate(
            |t| free_polar_kernel(r, t, r0, 0.0, tau, u()).unwrap(),
            0.0,
            std::f64::consts::TAU,
            1e-13,
            0.0,
        )
        .unwrap()
            / std::f64::consts::TAU;
        assert!((v.value - avg).abs() <= 1e-8);
    }

    #[test]
    fn image_sum_reduces_to_single_sheet_at_short_time() {
        let sheet = CoverSheet::new(u());
        let (r, r0, tau) = (2.0, 2.0, 0.1);
        for th in [0.0, 0.3, 1.0] {
            let img = image_sum_kernel(&sheet, r, th, r0, 0.0, tau, DEFAULT_M_MAX).unwrap();
            let single = sheet.eval(r, th, r0, tau).unwrap();
            assert!((img.value - single).abs() <= 1e-8);
        }
    }

    #[test]
    fn image_sum_is_periodic_and_matches_bessel() {
        let sheet = CoverSheet::new(u());
        let tau = 0.5;
        for &(r, r0, th) in &[(0.5, 0.5, 0.1), (1.0, 3.0, 2.0), (2.5, 0.7, 3.1), (3.0, 3.0, 4.5), (1.3, 0.5, -4.0), (0.8, 2.1, 5.9)] {
            let a = image_sum_kernel(&sheet, r, th, r0, 0.0, tau, 8).unwrap();
            let b = image_sum_kernel(&sheet, r, th + std::f64::consts::TAU, r0, 0.0, tau, 8).unwrap();
            assert!((a.value - b.value).abs() <= 1e-12 * a.value, "{} {}", a.value, b.value);
            let s = bessel_series_kernel(r, th, r0, 0.0, tau, 64, u()).unwrap();
            assert!((a.value - s.value).abs() <= 1e-4, "{} vs {}", a.value, s.value);
        }
    }

    #[test]
    fn plane_sheet_images_replicate() {
        let sheet = PlaneSheet { units: u() };
        let a = image_sum_kernel(&sheet, 1.0, 0.3, 1.2, 0.0, 0.5, 2).unwrap();
        let k = free_polar_kernel(1.0, 0.3, 1.2, 0.0, 0.5, u()).unwrap();
        assert_eq!(a.tail, 0.0);
        let kr = heat_from_distance_sq(1.0 + 1.44 + 2.0 * 1.2 * 0.3f64.cos(), 0.5, u());
        assert_relative_eq!(a.value, 5.0 * (k + kr), max_relative = 1e-12);
    }
}
