//! Uniform product grids, sampled wavefunctions and fourth-order finite differences.

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Chart, ChartKind, Point2};
use crate::scalar::Real;

/// One uniform coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis<T> {
    pub lo: T,
    pub step: T,
    pub n: usize,
    /// Periodic axes wrap: node `n` is node `0`.
    pub periodic: bool,
}

impl<T: Real> Axis<T> {
    /// `n` nodes spanning `[lo, hi]` inclusive.
    pub fn closed(lo: T, hi: T, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("grid", "an axis needs at least two nodes"));
        }
        if !(hi > lo) {
            return Err(invalid("grid", format!("axis upper bound {hi} must exceed {lo}")));
        }
        Ok(Self {
            lo,
            step: (hi - lo) / T::from_usize_lossy(n - 1),
            n,
            periodic: false,
        })
    }

    /// `n` nodes on `[0, 2π)`.
    pub fn angular(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(invalid("grid", "an angular axis needs at least four nodes"));
        }
        Ok(Self {
            lo: T::zero(),
            step: T::TAU() / T::from_usize_lossy(n),
            n,
            periodic: true,
        })
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        self.lo + self.step * T::from_usize_lossy(i)
    }

    pub fn hi(&self) -> T {
        self.node(self.n - 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Trapezoid weight of node `i` (the spacing factor included).
    pub fn weight(&self, i: usize) -> T {
        if !self.periodic && (i == 0 || i + 1 == self.n) {
            self.step * T::lit(0.5)
        } else {
            self.step
        }
    }

    /// Index of node `i + offset`, wrapping on periodic axes.
    #[inline]
    pub fn shift(&self, i: usize, offset: isize) -> Option<usize> {
        let j = i as isize + offset;
        if self.periodic {
            Some(j.rem_euclid(self.n as isize) as usize)
        } else if j < 0 || j >= self.n as isize {
            None
        } else {
            Some(j as usize)
        }
    }

    /// Nearest node index of a coordinate, and the residual offset in units of the spacing.
    pub fn locate(&self, x: T) -> (isize, T) {
        let s = (x - self.lo) / self.step;
        let i = s.round();
        (i.to_isize().unwrap_or(isize::MIN), s - i)
    }
}

/// Product grid over a chart. Node `(i, j)` has coordinates `(a1[i], a2[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub chart: Chart<T>,
    pub a1: Axis<T>,
    pub a2: Axis<T>,
}

impl<T: Real> Grid2<T> {
    /// Polar grid on `[r_lo, r_hi] × [0, 2π)`.
    pub fn polar(chart: Chart<T>, r_lo: T, r_hi: T, n_r: usize, n_theta: usize) -> Result<Self> {
        if chart.kind != ChartKind::Polar2d {
            return Err(invalid("chart", "polar grid needs the polar chart"));
        }
        if r_lo < chart.r_min {
            return Err(invalid(
                "r_lo",
                format!("grid starts at {r_lo}, below r_min = {}", chart.r_min),
            ));
        }
        Ok(Self {
            chart,
            a1: Axis::closed(r_lo, r_hi, n_r)?,
            a2: Axis::angular(n_theta)?,
        })
    }

    /// Cartesian grid on `[lo, hi]²` with `n × n` nodes.
    pub fn cartesian_square(lo: T, hi: T, n: usize) -> Result<Self> {
        let a = Axis::closed(lo, hi, n)?;
        Ok(Self {
            chart: Chart::cartesian(),
            a1: a,
            a2: a,
        })
    }

    pub fn len(&self) -> usize {
        self.a1.n * self.a2.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.a2.n + j
    }

    #[inline]
    pub fn unindex(&self, k: usize) -> (usize, usize) {
        (k / self.a2.n, k % self.a2.n)
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> Point2<T> {
        Point2::new(self.a1.node(i), self.a2.node(j))
    }

    pub fn point_at(&self, k: usize) -> Point2<T> {
        let (i, j) = self.unindex(k);
        self.point(i, j)
    }

    /// Quadrature weights `ρ(q) Δq1 Δq2` (trapezoid in non-periodic directions).
    pub fn measure_weights(&self, rho: impl Fn(Point2<T>) -> Result<T>) -> Result<Vec<T>> {
        (0..self.len())
            .map(|k| {
                let (i, j) = self.unindex(k);
                Ok(rho(self.point(i, j))? * self.a1.weight(i) * self.a2.weight(j))
            })
            .collect()
    }

    /// Node index of a point that must coincide with a grid node.
    pub fn node_of(&self, q: Point2<T>) -> Result<(usize, usize)> {
        let tol = T::lit(1e-6);
        let (i, di) = self.a1.locate(q.q1);
        let q2 = if self.a2.periodic {
            crate::geometry::wrap_angle(q.q2)
        } else {
            q.q2
        };
        let (j, dj) = self.a2.locate(q2);
        if di.abs() > tol || dj.abs() > tol {
            return Err(Error::Domain(format!("point {q:?} is not a grid node")));
        }
        let i = usize::try_from(i)
            .ok()
            .filter(|&i| i < self.a1.n)
            .ok_or_else(|| Error::Domain(format!("point {q:?} is off the grid")))?;
        let j = if self.a2.periodic {
            j.rem_euclid(self.a2.n as isize) as usize
        } else {
            usize::try_from(j)
                .ok()
                .filter(|&j| j < self.a2.n)
                .ok_or_else(|| Error::Domain(format!("point {q:?} is off the grid")))?
        };
        Ok((i, j))
    }

    /// True when node `(i, j)` has `margin` neighbours on each side in every
    /// non-periodic direction.
    pub fn is_interior(&self, i: usize, j: usize, margin: usize) -> bool {
        let ok = |ax: &Axis<T>, k: usize| ax.periodic || (k >= margin && k + margin < ax.n);
        ok(&self.a1, i) && ok(&self.a2, j)
    }
}

const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const D2: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

/// Stencil half-width of the fourth-order centred differences.
pub const STENCIL_HALF_WIDTH: usize = 2;

/// Complex samples `ψ(q1_i, q2_j)` on a product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction<T> {
    pub grid: Grid2<T>,
    pub samples: Vec<Complex<T>>,
}

impl<T: Real> Wavefunction<T> {
    pub fn zeros(grid: Grid2<T>) -> Self {
        let n = grid.len();
        Self {
            grid,
            samples: vec![Complex::new(T::zero(), T::zero()); n],
        }
    }

    /// Samples a complex-valued function at every node.
    pub fn from_fn(grid: Grid2<T>, f: impl Fn(Point2<T>) -> Complex<T>) -> Self {
        let samples = (0..grid.len()).map(|k| f(grid.point_at(k))).collect();
        Self { grid, samples }
    }

    /// Samples a real function at every node.
    pub fn from_real_fn(grid: Grid2<T>, f: impl Fn(Point2<T>) -> T) -> Self {
        Self::from_fn(grid, |q| Complex::new(f(q), T::zero()))
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex<T> {
        self.samples[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(Point2<T>, Complex<T>) -> Complex<T>) -> Self {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(k, &v)| f(self.grid.point_at(k), v))
            .collect();
        Self {
            grid: self.grid.clone(),
            samples,
        }
    }

    /// `a·self + b·other` on the same grid.
    pub fn axpby(&self, a: Complex<T>, other: &Self, b: Complex<T>) -> Result<Self> {
        if self.grid != other.grid {
            return Err(invalid("grid", "wavefunctions live on different grids"));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            samples,
        })
    }

    /// `∫ conj(φ) ψ ρ dq` with trapezoid weights.
    pub fn inner(&self, other: &Self, weights: &[T]) -> Complex<T> {
        self.samples
            .iter()
            .zip(&other.samples)
            .zip(weights)
            .fold(Complex::new(T::zero(), T::zero()), |acc, ((a, b), &w)| {
                acc + a.conj() * b * w
            })
    }

    /// Scales so that `∫|ψ|² ρ dq = 1`.
    pub fn normalized(&self, weights: &[T]) -> Result<Self> {
        let n2 = self.inner(self, weights).re;
        if !(n2 > T::zero()) {
            return Err(Error::Numeric("cannot normalize a zero wavefunction".into()));
        }
        let s = n2.sqrt().recip();
        Ok(self.map(|_, v| v * s))
    }

    fn stencil(&self, i: usize, j: usize, axis: usize, coeffs: &[f64; 5]) -> Result<Complex<T>> {
        let ax = if axis == 0 { &self.grid.a1 } else { &self.grid.a2 };
        let centre = if axis == 0 { i } else { j };
        let mut acc = Complex::new(T::zero(), T::zero());
        for (s, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let k = ax.shift(centre, s as isize - 2).ok_or_else(|| {
                Error::Boundary(format!(
                    "node ({i}, {j}) is within {STENCIL_HALF_WIDTH} cells of the grid edge"
                ))
            })?;
            let v = if axis == 0 { self.at(k, j) } else { self.at(i, k) };
            acc = acc + v * T::lit(c);
        }
        Ok(acc)
    }

    /// `∂ψ/∂q_axis` at a node (fourth order).
    pub fn d1(&self, i: usize, j: usize, axis: usize) -> Result<Complex<T>> {
        let h = if axis == 0 { self.grid.a1.step } else { self.grid.a2.step };
        Ok(self.stencil(i, j, axis, &D1)? / h)
    }

    /// `∂²ψ/∂q_axis²` at a node (fourth order).
    pub fn d2(&self, i: usize, j: usize, axis: usize) -> Result<Complex<T>> {
        let h = if axis == 0 { self.grid.a1.step } else { self.grid.a2.step };
        Ok(self.stencil(i, j, axis, &D2)? / (h * h))
    }

    /// Largest modulus over nodes satisfying `keep`.
    pub fn max_abs_where(&self, keep: impl Fn(usize, usize) -> bool) -> T {
        let mut m = T::zero();
        for k in 0..self.samples.len() {
            let (i, j) = self.grid.unindex(k);
            if keep(i, j) {
                m = m.max(self.samples[k].norm());
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fourth_order_derivatives_converge() {
        let err = |n: usize| {
            let g = Grid2::<f64>::polar(Chart::polar(), 1.0, 3.0, n, 16).unwrap();
            let psi = Wavefunction::from_real_fn(g, |q| q.q1.sin());
            let i = (n - 1) / 2;
            let x = psi.grid.a1.node(i);
            (psi.d2(i, 0, 0).unwrap().re + x.sin()).abs()
        };
        let (e1, e2) = (err(41), err(81));
        assert!(e1 < 1e-6);
        let order = (e1 / e2).log2();
        assert!((3.6..4.4).contains(&order), "order {order}");
    }

    #[test]
    fn periodic_axis_wraps() {
        let g = Grid2::<f64>::polar(Chart::polar(), 1.0, 2.0, 8, 64).unwrap();
        let psi = Wavefunction::from_real_fn(g, |q| q.q2.cos());
        let d = psi.d2(3, 0, 1).unwrap().re;
        assert_relative_eq!(d, -1.0, max_relative = 1e-5);
        let d1 = psi.d1(3, 63, 1).unwrap().re;
        let th = psi.grid.a2.node(63);
        assert_relative_eq!(d1, -th.sin(), max_relative = 1e-4);
    }

    #[test]
    fn edge_stencil_is_a_boundary_error() {
        let g = Grid2::polar(Chart::polar(), 1.0, 2.0, 8, 16).unwrap();
        let psi = Wavefunction::from_real_fn(g, |q| q.q1);
        assert!(matches!(psi.d2(1, 0, 0), Err(Error::Boundary(_))));
        assert!(psi.d2(2, 0, 0).is_ok());
    }

    #[test]
    fn grid_rejects_start_below_cutoff() {
        assert!(Grid2::polar(Chart::<f64>::polar(), 1e-9, 2.0, 8, 16).is_err());
    }

    #[test]
    fn node_lookup() {
        let g = Grid2::polar(Chart::polar(), 1.0, 2.0, 11, 16).unwrap();
        let q = g.point(4, 3);
        assert_eq!(g.node_of(q).unwrap(), (4, 3));
        assert!(g.node_of(Point2::polar(1.05, 0.0)).is_err());
        let wrapped = Point2::polar(q.q1, q.q2 + std::f64::consts::TAU);
        assert_eq!(g.node_of(wrapped).unwrap(), (4, 3));
    }
}
