//! Coordinate charts on the plane, the integration measure ρ and the scaling
//! function α.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Default lower cutoff for the radial coordinate.
pub const DEFAULT_R_MIN: f64 = 1e-6;

/// Generalized coordinates `(q1, q2)`; `(r, θ)` on the polar chart, `(x, y)` on the
/// Cartesian one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2<T> {
    pub q1: T,
    pub q2: T,
}

impl<T: Real> Point2<T> {
    pub fn new(q1: T, q2: T) -> Self {
        Self { q1, q2 }
    }

    /// Polar point `(r, θ)`.
    pub fn polar(r: T, theta: T) -> Self {
        Self { q1: r, q2: theta }
    }

    /// Cartesian image of a polar point.
    pub fn polar_to_cartesian(self) -> Self {
        Self::new(self.q1 * self.q2.cos(), self.q1 * self.q2.sin())
    }

    /// Polar image of a Cartesian point, with θ in `[0, 2π)`.
    pub fn cartesian_to_polar(self) -> Self {
        let r = self.q1.hypot(self.q2);
        Self::polar(r, wrap_angle(self.q2.atan2(self.q1)))
    }
}

/// Canonical representative of an angle in `[0, 2π)`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let two_pi = T::TAU();
    let w = theta - two_pi * (theta / two_pi).floor();
    // floor can leave w == 2π after rounding
    if w >= two_pi || w < T::zero() {
        T::zero()
    } else {
        w
    }
}

/// Signed angular difference mapped to `(-π, π]`.
pub fn angle_diff<T: Real>(a: T, b: T) -> T {
    let pi = T::PI();
    let d = wrap_angle(a - b);
    if d > pi {
        d - T::TAU()
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    #[serde(rename = "cartesian2d")]
    Cartesian2d,
    #[serde(rename = "polar2d")]
    Polar2d,
}

impl ChartKind {
    pub fn id(self) -> &'static str {
        match self {
            ChartKind::Cartesian2d => "cartesian2d",
            ChartKind::Polar2d => "polar2d",
        }
    }

    /// Numeric code used in binary dumps.
    pub fn code(self) -> u64 {
        match self {
            ChartKind::Cartesian2d => 0,
            ChartKind::Polar2d => 1,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(ChartKind::Cartesian2d),
            1 => Ok(ChartKind::Polar2d),
            other => Err(Error::Format(format!("unknown chart code {other}"))),
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ChartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartesian2d" => Ok(ChartKind::Cartesian2d),
            "polar2d" => Ok(ChartKind::Polar2d),
            other => Err(invalid("chart", format!("unknown chart id `{other}`"))),
        }
    }
}

/// A two-dimensional chart of the flat plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chart<T> {
    pub kind: ChartKind,
    /// Radial cutoff for the polar chart; ignored on the Cartesian chart.
    pub r_min: T,
}

impl<T: Real> Chart<T> {
    pub fn cartesian() -> Self {
        Self {
            kind: ChartKind::Cartesian2d,
            r_min: T::lit(DEFAULT_R_MIN),
        }
    }

    pub fn polar() -> Self {
        Self {
            kind: ChartKind::Polar2d,
            r_min: T::lit(DEFAULT_R_MIN),
        }
    }

    pub fn with_r_min(mut self, r_min: T) -> Self {
        self.r_min = r_min;
        self
    }

    pub fn from_kind(kind: ChartKind) -> Self {
        match kind {
            ChartKind::Cartesian2d => Self::cartesian(),
            ChartKind::Polar2d => Self::polar(),
        }
    }

    pub fn is_polar(&self) -> bool {
        self.kind == ChartKind::Polar2d
    }

    /// Fails for polar points with `r ≤ 0`.
    pub fn check(&self, q: Point2<T>) -> Result<()> {
        if !q.q1.is_finite() || !q.q2.is_finite() {
            return Err(Error::Domain(format!("non-finite point {q:?}")));
        }
        if self.is_polar() && q.q1 <= T::zero() {
            return Err(Error::Domain(format!("polar radius r = {} must be > 0", q.q1)));
        }
        Ok(())
    }

    /// Like [`Chart::check`] but also enforces the `r_min` cutoff.
    pub fn check_grid(&self, q: Point2<T>) -> Result<()> {
        self.check(q)?;
        if self.is_polar() && q.q1 < self.r_min {
            return Err(Error::Domain(format!(
                "polar radius r = {} below cutoff r_min = {}",
                q.q1, self.r_min
            )));
        }
        Ok(())
    }

    /// Covariant metric `g_ij(q)`.
    pub fn metric(&self, q: Point2<T>) -> Result<[[T; 2]; 2]> {
        self.check(q)?;
        let (o, z) = (T::one(), T::zero());
        Ok(match self.kind {
            ChartKind::Cartesian2d => [[o, z], [z, o]],
            ChartKind::Polar2d => [[o, z], [z, q.q1 * q.q1]],
        })
    }

    /// Contravariant metric `g^ij(q)`.
    pub fn metric_inverse(&self, q: Point2<T>) -> Result<[[T; 2]; 2]> {
        self.check(q)?;
        let (o, z) = (T::one(), T::zero());
        Ok(match self.kind {
            ChartKind::Cartesian2d => [[o, z], [z, o]],
            ChartKind::Polar2d => [[o, z], [z, (q.q1 * q.q1).recip()]],
        })
    }

    /// `√g(q)`.
    pub fn density(&self, q: Point2<T>) -> Result<T> {
        self.check(q)?;
        Ok(match self.kind {
            ChartKind::Cartesian2d => T::one(),
            ChartKind::Polar2d => q.q1,
        })
    }

    /// The scaling function that yields the Laplace–Beltrami operator, `α = √g`.
    pub fn default_scaling(&self) -> ScalingFunction<T> {
        match self.kind {
            ChartKind::Cartesian2d => ScalingFunction::Constant(T::one()),
            ChartKind::Polar2d => ScalingFunction::SqrtG,
        }
    }

    /// Euclidean distance squared between two points of this chart.
    pub fn distance_sq(&self, a: Point2<T>, b: Point2<T>) -> T {
        match self.kind {
            ChartKind::Cartesian2d => {
                let (dx, dy) = (a.q1 - b.q1, a.q2 - b.q2);
                dx * dx + dy * dy
            }
            ChartKind::Polar2d => {
                a.q1 * a.q1 + b.q1 * b.q1 - T::lit(2.0) * a.q1 * b.q1 * (a.q2 - b.q2).cos()
            }
        }
    }
}

/// Measure density ρ(q) of the Hilbert space inner product `ρ(q) d²q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureDensity<T> {
    /// ρ = √g.
    SqrtG,
    Constant(T),
}

impl<T: Real> MeasureDensity<T> {
    pub fn eval(&self, chart: &Chart<T>, q: Point2<T>) -> Result<T> {
        match *self {
            MeasureDensity::SqrtG => chart.density(q),
            MeasureDensity::Constant(c) => {
                chart.check(q)?;
                Ok(c)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MeasureDensity::Constant(c) if !(c > T::zero()) => {
                Err(invalid("rho", "constant density must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Strictly positive scaling function α(q).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingFunction<T> {
    /// α = √g.
    SqrtG,
    Constant(T),
}

impl<T: Real> ScalingFunction<T> {
    pub fn unit() -> Self {
        ScalingFunction::Constant(T::one())
    }

    pub fn eval(&self, chart: &Chart<T>, q: Point2<T>) -> Result<T> {
        match *self {
            ScalingFunction::SqrtG => chart.density(q),
            ScalingFunction::Constant(c) => {
                chart.check(q)?;
                Ok(c)
            }
        }
    }

    /// True when α does not depend on the point.
    pub fn is_constant(&self) -> bool {
        matches!(self, ScalingFunction::Constant(_))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalingFunction::Constant(c) if !(c > T::zero()) => {
                Err(invalid("alpha", "scaling function must be strictly positive"))
            }
            _ => Ok(()),
        }
    }

    /// Identifier used in config files and dump headers.
    pub fn id(&self) -> &'static str {
        match self {
            ScalingFunction::SqrtG => "sqrt_g",
            ScalingFunction::Constant(_) => "one",
        }
    }

    /// Numeric code used in binary dumps.
    pub fn code(&self) -> u64 {
        match self {
            ScalingFunction::Constant(_) => 0,
            ScalingFunction::SqrtG => 1,
        }
    }
}

/// Physical constants threaded through every routine. Defaults to ħ = m = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units<T> {
    pub hbar: T,
    pub mass: T,
}

impl<T: Real> Default for Units<T> {
    fn default() -> Self {
        Self {
            hbar: T::one(),
            mass: T::one(),
        }
    }
}

impl<T: Real> Units<T> {
    pub fn new(hbar: T, mass: T) -> Result<Self> {
        if !(hbar > T::zero()) || !hbar.is_finite() {
            return Err(invalid("hbar", "must be a positive finite number"));
        }
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(invalid("m", "must be a positive finite number"));
        }
        Ok(Self { hbar, mass })
    }

    /// `ħ²/2m`.
    pub fn kinetic_prefactor(&self) -> T {
        self.hbar * self.hbar / (T::lit(2.0) * self.mass)
    }
}
