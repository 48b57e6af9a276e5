//! Smooth probe functions and the action of short-time kernels on them.
//!
//! A probe is `f(r, θ) = R(r) cos(lθ)` with analytic radial derivatives. For the
//! sliced polar kernels the angular integrals are Gaussian convolutions of
//! `cos(lθ)`, which only damp it by `exp(−l² v/2)`, so only the radial integrals are
//! done numerically.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::generators::{Hamiltonian, PseudoHamiltonian};
use crate::geometry::{Chart, ChartKind, Point2, ScalingFunction, Units};
use crate::grid::{Grid2, Wavefunction};
use crate::kernel::short_time_kernel;

/// Radial profile with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialProfile {
    /// `exp(−((r − centre)/width)²)`.
    GaussianRing { centre: f64, width: f64 },
    /// `r^k`.
    Power { k: i32 },
    Constant,
}

impl RadialProfile {
    /// `(R, R', R'')` at `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        match *self {
            Self::GaussianRing { centre, width } => {
                let u = (r - centre) / width;
                let g = (-u * u).exp();
                let w2 = width * width;
                (g, -2.0 * u / width * g, (4.0 * u * u - 2.0) / w2 * g)
            }
            Self::Power { k } => {
                let kf = k as f64;
                (r.powi(k), kf * r.powi(k - 1), kf * (kf - 1.0) * r.powi(k - 2))
            }
            Self::Constant => (1.0, 0.0, 0.0),
        }
    }
}

/// `f(r, θ) = R(r) cos(lθ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeProbe {
    pub radial: RadialProfile,
    pub l: u32,
}

impl ModeProbe {
    pub fn new(radial: RadialProfile, l: u32) -> Self {
        Self { radial, l }
    }

    pub fn ring(centre: f64, width: f64, l: u32) -> Self {
        Self::new(RadialProfile::GaussianRing { centre, width }, l)
    }

    fn polar_of(chart: &Chart<f64>, q: Point2<f64>) -> Result<Point2<f64>> {
        chart.check(q)?;
        let p = match chart.kind {
            ChartKind::Polar2d => q,
            ChartKind::Cartesian2d => q.cartesian_to_polar(),
        };
        if !(p.q1 > 0.0) {
            return Err(Error::Domain("probe evaluated at the origin".into()));
        }
        Ok(p)
    }

    pub fn value(&self, chart: &Chart<f64>, q: Point2<f64>) -> Result<f64> {
        let p = Self::polar_of(chart, q)?;
        Ok(self.radial.eval(p.q1).0 * (self.l as f64 * p.q2).cos())
    }

    /// Flat Laplacian `R'' + R'/r − l² R/r²` times `cos(lθ)`.
    pub fn laplacian(&self, chart: &Chart<f64>, q: Point2<f64>) -> Result<f64> {
        let p = Self::polar_of(chart, q)?;
        let r = p.q1;
        let (f, f1, f2) = self.radial.eval(r);
        let l = self.l as f64;
        Ok((f2 + f1 / r - l * l * f / (r * r)) * (l * p.q2).cos())
    }

    pub fn sample(&self, grid: &Grid2<f64>) -> Result<Wavefunction<f64>> {
        let chart = grid.chart;
        for k in 0..grid.len() {
            Self::polar_of(&chart, grid.point_at(k))?;
        }
        Ok(Wavefunction::from_real_fn(grid.clone(), |q| {
            self.value(&chart, q).unwrap_or(f64::NAN)
        }))
    }
}

/// The shipped battery: Gaussian rings around `r̄` with angular modes and widths,
/// plus slow power laws.
pub fn standard_probes(centre: f64) -> Vec<ModeProbe> {
    vec![
        ModeProbe::ring(centre, 1.0, 0),
        ModeProbe::ring(centre, 1.0, 1),
        ModeProbe::ring(centre, 1.0, 2),
        ModeProbe::ring(centre + 0.3, 1.5, 0),
        ModeProbe::ring(centre - 0.2, 0.8, 1),
        ModeProbe::new(RadialProfile::Power { k: 2 }, 0),
        ModeProbe::new(RadialProfile::Power { k: 1 }, 1),
    ]
}

/// Something that maps a probe `f` to `∫ K(q; q0) f(q0) ρ(q0) dq0`.
pub trait ProbeAction: Sync {
    fn chart(&self) -> Chart<f64>;
    fn units(&self) -> Units<f64>;
    /// Euclidean time covered by the kernel.
    fn time(&self) -> f64;
    /// Slice count of the kernel, `1` for a single short-time step.
    fn slices(&self) -> usize;
    fn act_many(&self, probes: &[ModeProbe], q: Point2<f64>) -> Result<Vec<f64>>;

    fn act(&self, probe: &ModeProbe, q: Point2<f64>) -> Result<f64> {
        Ok(self.act_many(std::slice::from_ref(probe), q)?[0])
    }
}

/// Which short-time kernel a probe study applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelScheme {
    /// One exact Cartesian heat-kernel step.
    Cartesian,
    /// Polar canonical kernel without time scaling.
    Unscaled { n_slices: usize },
    /// Polar reduced kernel with `α = √g`.
    Scaled { n_slices: usize },
}

impl KernelScheme {
    pub fn slices(&self) -> usize {
        match *self {
            Self::Cartesian => 1,
            Self::Unscaled { n_slices } | Self::Scaled { n_slices } => n_slices,
        }
    }

    pub fn chart(&self) -> Chart<f64> {
        match self {
            Self::Cartesian => Chart::cartesian(),
            _ => Chart::polar(),
        }
    }

    pub fn with_slices(&self, n_slices: usize) -> Self {
        match *self {
            Self::Cartesian => Self::Cartesian,
            Self::Unscaled { .. } => Self::Unscaled { n_slices },
            Self::Scaled { .. } => Self::Scaled { n_slices },
        }
    }

    /// The kernel over time `tau` as a probe action.
    pub fn action(&self, units: Units<f64>, tau: f64) -> Result<Box<dyn ProbeAction>> {
        Ok(match *self {
            Self::Cartesian => Box::new(CartesianAction::free(units, tau)?),
            Self::Unscaled { n_slices } => Box::new(SlicedAction::free_polar(units, None, n_slices, tau)?),
            Self::Scaled { n_slices } => {
                Box::new(SlicedAction::free_polar(units, Some(ScalingFunction::SqrtG), n_slices, tau)?)
            }
        })
    }
}

/// Widest radial excursion, in units of `√(ħτ/m)`.
pub const RADIAL_HALF_WIDTH: f64 = 12.0;
/// Radial nodes per `√(ħτ/(N m))`.
pub const NODES_PER_SD: f64 = 3.0;
/// Largest slice count handled by tensor-product radial quadrature.
pub const MAX_SLICES: usize = 3;

/// Sliced polar kernel over a short time `τ`, in either scheme.
///
/// * unscaled: `N` canonical short-time steps of `τ/N` with intermediate measure `ρ dq`;
/// * scaled: the reduced kernel with `F = Σ_j (α_{j+1} + α_j)`, step `2τ/F`, path
///   factor `2N/F` and prefactor `√(α(q) α(q0))`.
///
/// Interior and initial radii are integrated with a tensor trapezoid rule.
#[derive(Debug, Clone, Copy)]
pub struct SlicedAction {
    /// Pseudo-Hamiltonian whose `α` enters the slice weights (`E = 0`).
    pub h: PseudoHamiltonian<f64>,
    pub scaled: bool,
    pub n_slices: usize,
    pub tau: f64,
}

impl SlicedAction {
    fn new(h: PseudoHamiltonian<f64>, scaled: bool, n_slices: usize, tau: f64) -> Result<Self> {
        if !h.chart().is_polar() {
            return Err(invalid("chart", "sliced probe action is implemented on the polar chart"));
        }
        if n_slices == 0 || n_slices > MAX_SLICES {
            return Err(invalid("N", format!("must be in 1..={MAX_SLICES} for tensor quadrature")));
        }
        if !(tau > 0.0) {
            return Err(invalid("tau", "must be positive"));
        }
        if h.energy != 0.0 {
            return Err(invalid("E", "the reduced kernel carries no pseudo-energy"));
        }
        Ok(Self {
            h,
            scaled,
            n_slices,
            tau,
        })
    }

    /// `N` plain steps of `τ/N` of the free Hamiltonian.
    pub fn unscaled(h: PseudoHamiltonian<f64>, n_slices: usize, tau: f64) -> Result<Self> {
        Self::new(h, false, n_slices, tau)
    }

    /// Reduced scaled kernel with scaling function `alpha`.
    pub fn scaled(base: Hamiltonian<f64>, alpha: ScalingFunction<f64>, n_slices: usize, tau: f64) -> Result<Self> {
        Self::new(PseudoHamiltonian::new(base, alpha, 0.0)?, true, n_slices, tau)
    }

    pub fn free_polar(units: Units<f64>, alpha: Option<ScalingFunction<f64>>, n_slices: usize, tau: f64) -> Result<Self> {
        let base = Hamiltonian::free(Chart::polar(), units);
        match alpha {
            Some(a) => Self::scaled(base, a, n_slices, tau),
            None => Self::unscaled(PseudoHamiltonian::unscaled(base), n_slices, tau),
        }
    }
}

/// Per-pair slice data at unit step.
#[derive(Clone, Copy)]
struct Pair {
    var1: f64,
    var2: f64,
    pref: f64,
}

impl ProbeAction for SlicedAction {
    fn chart(&self) -> Chart<f64> {
        *self.h.chart()
    }

    fn units(&self) -> Units<f64> {
        *self.h.units()
    }

    fn time(&self) -> f64 {
        self.tau
    }

    fn slices(&self) -> usize {
        self.n_slices
    }

    fn act_many(&self, probes: &[ModeProbe], q: Point2<f64>) -> Result<Vec<f64>> {
        let chart = self.chart();
        chart.check_grid(q)?;
        let u = self.units();
        let n = self.n_slices;
        let r = q.q1;
        let width = RADIAL_HALF_WIDTH * (u.hbar * self.tau / u.mass).sqrt();
        let step = (u.hbar * self.tau / (n as f64 * u.mass)).sqrt() / NODES_PER_SD;
        let lo = (r - width).max(chart.r_min);
        let count = ((r + width - lo) / step).ceil() as usize + 1;
        let nodes: Vec<f64> = (0..count).map(|i| lo + step * i as f64).collect();
        let pt = |x: f64| Point2::polar(x, 0.0);
        let alpha: Vec<f64> = nodes
            .iter()
            .map(|&x| self.h.alpha.eval(&chart, pt(x)))
            .collect::<Result<_>>()?;
        let rho: Vec<f64> = nodes.iter().map(|&x| chart.density(pt(x))).collect::<Result<_>>()?;
        let alpha_end = self.h.alpha.eval(&chart, q)?;
        let pair = |a: f64, b: f64| -> Result<Pair> {
            let g = crate::kernel::slice_gaussian(pt(a), pt(b), 1.0, &self.h)?;
            if g.weight != 1.0 {
                return Err(Error::Unsupported("probe action needs a free Hamiltonian".into()));
            }
            Ok(Pair {
                var1: g.var1,
                var2: g.var2,
                pref: g.prefactor,
            })
        };
        let m = nodes.len();
        let mut inner = Vec::with_capacity(if n > 1 { m * m } else { 0 });
        if n > 1 {
            for &a in &nodes {
                for &b in &nodes {
                    inner.push(pair(a, b)?);
                }
            }
        }
        let last: Vec<Pair> = nodes.iter().map(|&b| pair(r, b)).collect::<Result<_>>()?;
        let profiles: Vec<Vec<f64>> = probes.iter().map(|p| nodes.iter().map(|&x| p.radial.eval(x).0).collect()).collect();
        let l2: Vec<f64> = probes.iter().map(|p| (p.l as f64).powi(2)).collect();
        let tw = step;
        let mut acc = vec![0.0; probes.len()];
        let mut idx = vec![0usize; n];
        // idx[0] is r0, idx[k] the interior radius r_k
        loop {
            let mut f_sum = 0.0;
            for k in 0..n {
                let next = if k + 1 < n { alpha[idx[k + 1]] } else { alpha_end };
                f_sum += next + alpha[idx[k]];
            }
            let (eps, factor) = if self.scaled {
                let nn = 2.0 * n as f64;
                (2.0 * self.tau / f_sum, nn / f_sum * (alpha_end * alpha[idx[0]]).sqrt())
            } else {
                (self.tau / n as f64, 1.0)
            };
            let mut w = factor;
            let mut v_theta = 0.0;
            for k in 0..n {
                let (p, d) = if k + 1 < n {
                    (inner[idx[k + 1] * m + idx[k]], nodes[idx[k + 1]] - nodes[idx[k]])
                } else {
                    (last[idx[k]], r - nodes[idx[k]])
                };
                let var = eps * p.var1;
                w *= p.pref * (-d * d / (2.0 * var)).exp() / (std::f64::consts::TAU * var).sqrt() * rho[idx[k]] * tw;
                v_theta += eps * p.var2;
            }
            if w != 0.0 {
                for (a, (prof, &ll)) in acc.iter_mut().zip(profiles.iter().zip(&l2)) {
                    *a += w * prof[idx[0]] * (-0.5 * ll * v_theta).exp();
                }
            }
            // odometer
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == n {
                    return Ok(acc
                        .iter()
                        .zip(probes)
                        .map(|(a, p)| a * (p.l as f64 * q.q2).cos())
                        .collect());
                }
            }
        }
    }
}

/// Single Cartesian short-time step `τ`, applied by a 2-D trapezoid rule around `q`.
#[derive(Debug, Clone, Copy)]
pub struct CartesianAction {
    pub h: PseudoHamiltonian<f64>,
    pub tau: f64,
}

impl CartesianAction {
    pub fn free(units: Units<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(invalid("tau", "must be positive"));
        }
        Ok(Self {
            h: PseudoHamiltonian::unscaled(Hamiltonian::free(Chart::cartesian(), units)),
            tau,
        })
    }
}

impl ProbeAction for CartesianAction {
    fn chart(&self) -> Chart<f64> {
        Chart::cartesian()
    }

    fn units(&self) -> Units<f64> {
        *self.h.units()
    }

    fn time(&self) -> f64 {
        self.tau
    }

    fn slices(&self) -> usize {
        1
    }

    fn act_many(&self, probes: &[ModeProbe], q: Point2<f64>) -> Result<Vec<f64>> {
        let u = self.units();
        let chart = Chart::cartesian();
        let sd = (u.hbar * self.tau / u.mass).sqrt();
        let step = sd / NODES_PER_SD;
        let half = (RADIAL_HALF_WIDTH * NODES_PER_SD).ceil() as i64;
        let mut acc = vec![0.0; probes.len()];
        for i in -half..=half {
            for j in -half..=half {
                let q0 = Point2::new(q.q1 + step * i as f64, q.q2 + step * j as f64);
                let k = short_time_kernel(&chart, q, q0, self.tau, &self.h)? * step * step;
                for (a, p) in acc.iter_mut().zip(probes) {
                    *a += k * p.value(&chart, q0)?;
                }
            }
        }
        Ok(acc)
    }
}
