//! Finite-difference Hamiltonians on product grids and effective-potential extraction.
//!
//! Three kinetic operators are compared:
//!
//! * canonical quantization in polar coordinates, which carries an extra `ħ²/8mr²`;
//! * the general `H_{ρ,α} = −(ħ²/2m) ρ^{-1/2} α^{-1/2} ∂_i (g^{ij} α ∂_j (ρ^{1/2} α^{-1/2} ψ))`;
//! * the Laplace–Beltrami operator `−(ħ²/2m) (1/√g) ∂_i (√g g^{ij} ∂_j ψ)`.

use std::io::Write;

use num_complex::Complex;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{ChartKind, MeasureDensity, Point2, ScalingFunction, Units};
use crate::grid::{Wavefunction, STENCIL_HALF_WIDTH};
use crate::probe::{KernelScheme, ModeProbe, ProbeAction};
use crate::stats::{least_squares, LinearFit};

type C = Complex<f64>;

/// Nodes this close to a non-periodic edge get no value from the nested operator.
pub const NESTED_MARGIN: usize = 2 * STENCIL_HALF_WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    CanonicalPolar,
    HRhoAlpha,
    LaplaceBeltrami,
}

/// A kinetic operator with its measure and scaling function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub rho: MeasureDensity<f64>,
    pub alpha: ScalingFunction<f64>,
    pub units: Units<f64>,
}

impl OperatorSpec {
    pub fn laplace_beltrami(units: Units<f64>) -> Self {
        Self {
            kind: OperatorKind::LaplaceBeltrami,
            rho: MeasureDensity::SqrtG,
            alpha: ScalingFunction::SqrtG,
            units,
        }
    }

    pub fn canonical_polar(units: Units<f64>) -> Self {
        Self {
            kind: OperatorKind::CanonicalPolar,
            ..Self::laplace_beltrami(units)
        }
    }

    pub fn h_rho_alpha(rho: MeasureDensity<f64>, alpha: ScalingFunction<f64>, units: Units<f64>) -> Self {
        Self {
            kind: OperatorKind::HRhoAlpha,
            rho,
            alpha,
            units,
        }
    }

    /// Stencil reach of the operator.
    pub fn margin(&self) -> usize {
        match self.kind {
            OperatorKind::HRhoAlpha => NESTED_MARGIN,
            _ => STENCIL_HALF_WIDTH,
        }
    }

    /// `(Ĥψ)` at node `(i, j)`.
    pub fn apply_at(&self, psi: &Wavefunction<f64>, i: usize, j: usize) -> Result<C> {
        match self.kind {
            OperatorKind::LaplaceBeltrami => laplace_beltrami_at(psi, i, j, self.units),
            OperatorKind::CanonicalPolar => canonical_polar_at(psi, i, j, self.units),
            OperatorKind::HRhoAlpha => h_rho_alpha_at(psi, i, j, self.rho, self.alpha, self.units),
        }
    }

    /// `Ĥψ` on every node far enough from the edges; the remaining nodes are zero.
    pub fn apply(&self, psi: &Wavefunction<f64>) -> Result<Wavefunction<f64>> {
        let g = &psi.grid;
        let m = self.margin();
        let mut out = Wavefunction::zeros(g.clone());
        for k in 0..g.len() {
            let (i, j) = g.unindex(k);
            if g.is_interior(i, j, m) {
                out.samples[k] = self.apply_at(psi, i, j)?;
            }
        }
        Ok(out)
    }
}

fn polar_radius(psi: &Wavefunction<f64>, i: usize) -> Result<f64> {
    let r = psi.grid.a1.node(i);
    if !(r >= psi.grid.chart.r_min) {
        return Err(Error::Domain(format!("r = {r} below r_min")));
    }
    Ok(r)
}

/// `−(ħ²/2m)[ψ_rr + ψ_r/r + ψ_θθ/r²]` (polar) or `−(ħ²/2m)[ψ_xx + ψ_yy]` at one node.
pub fn laplace_beltrami_at(psi: &Wavefunction<f64>, i: usize, j: usize, units: Units<f64>) -> Result<C> {
    let lap = match psi.grid.chart.kind {
        ChartKind::Cartesian2d => psi.d2(i, j, 0)? + psi.d2(i, j, 1)?,
        ChartKind::Polar2d => {
            let r = polar_radius(psi, i)?;
            psi.d2(i, j, 0)? + psi.d1(i, j, 0)? / r + psi.d2(i, j, 1)? / (r * r)
        }
    };
    Ok(-lap * units.kinetic_prefactor())
}

/// Canonical polar operator: Laplace–Beltrami plus `ħ²/(8 m r²)`.
pub fn canonical_polar_at(psi: &Wavefunction<f64>, i: usize, j: usize, units: Units<f64>) -> Result<C> {
    if !psi.grid.chart.is_polar() {
        return Err(invalid("chart", "canonical polar operator needs the polar chart"));
    }
    let r = polar_radius(psi, i)?;
    let extra = units.hbar * units.hbar / (8.0 * units.mass * r * r);
    Ok(laplace_beltrami_at(psi, i, j, units)? + psi.at(i, j) * extra)
}

const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];

/// `H_{ρ,α} ψ` at one node from nested first differences.
pub fn h_rho_alpha_at(
    psi: &Wavefunction<f64>,
    i: usize,
    j: usize,
    rho: MeasureDensity<f64>,
    alpha: ScalingFunction<f64>,
    units: Units<f64>,
) -> Result<C> {
    let g = &psi.grid;
    let chart = g.chart;
    if !g.is_interior(i, j, NESTED_MARGIN) {
        return Err(Error::Boundary(format!(
            "node ({i}, {j}) is within {NESTED_MARGIN} cells of the grid edge"
        )));
    }
    let inner = |a: usize, b: usize| -> Result<C> {
        let q = g.point(a, b);
        Ok(psi.at(a, b) * (rho.eval(&chart, q)? / alpha.eval(&chart, q)?).sqrt())
    };
    // g^{kk} α ∂_k u at a node, k = axis
    let flux = |a: usize, b: usize, axis: usize| -> Result<C> {
        let ax = if axis == 0 { &g.a1 } else { &g.a2 };
        let centre = if axis == 0 { a } else { b };
        let mut d = C::new(0.0, 0.0);
        for (s, &c) in D1.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let k = ax.shift(centre, s as isize - 2).expect("interior node");
            d += if axis == 0 { inner(k, b)? } else { inner(a, k)? } * c;
        }
        let q = g.point(a, b);
        let gi = chart.metric_inverse(q)?;
        Ok(d / ax.step * gi[axis][axis] * alpha.eval(&chart, q)?)
    };
    let mut div = C::new(0.0, 0.0);
    for axis in 0..2 {
        let ax = if axis == 0 { &g.a1 } else { &g.a2 };
        let centre = if axis == 0 { i } else { j };
        let mut acc = C::new(0.0, 0.0);
        for (s, &c) in D1.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let k = ax.shift(centre, s as isize - 2).expect("interior node");
            acc += if axis == 0 { flux(k, j, 0)? } else { flux(i, k, 1)? } * c;
        }
        div += acc / ax.step;
    }
    let q = g.point(i, j);
    let outer = (rho.eval(&chart, q)? * alpha.eval(&chart, q)?).sqrt().recip();
    Ok(-div * outer * units.kinetic_prefactor())
}

pub fn apply_laplace_beltrami(psi: &Wavefunction<f64>, units: Units<f64>) -> Result<Wavefunction<f64>> {
    OperatorSpec::laplace_beltrami(units).apply(psi)
}

pub fn apply_canonical_polar(psi: &Wavefunction<f64>, units: Units<f64>) -> Result<Wavefunction<f64>> {
    OperatorSpec::canonical_polar(units).apply(psi)
}

pub fn apply_h_rho_alpha(
    psi: &Wavefunction<f64>,
    rho: MeasureDensity<f64>,
    alpha: ScalingFunction<f64>,
    units: Units<f64>,
) -> Result<Wavefunction<f64>> {
    OperatorSpec::h_rho_alpha(rho, alpha, units).apply(psi)
}

/// `|⟨φ, Ĥψ⟩_ρ − ⟨Ĥφ, ψ⟩_ρ| / max(|⟨φ, Ĥψ⟩_ρ|, |⟨Ĥφ, ψ⟩_ρ|)`.
///
/// Both functions should vanish within the operator's margin of the edges.
pub fn hermiticity_defect(op: &OperatorSpec, phi: &Wavefunction<f64>, psi: &Wavefunction<f64>) -> Result<f64> {
    let chart = psi.grid.chart;
    let w = psi.grid.measure_weights(|q| op.rho.eval(&chart, q))?;
    let a = phi.inner(&op.apply(psi)?, &w);
    let b = op.apply(phi)?.inner(psi, &w);
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((a - b).norm() / scale)
}

/// Writes `r, theta, residual_re, residual_im` rows for the nodes selected by `keep`.
pub fn write_residual_csv<W: Write>(
    out: W,
    residual: &Wavefunction<f64>,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r", "theta", "residual_re", "residual_im"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for k in 0..residual.grid.len() {
        let (i, j) = residual.grid.unindex(k);
        if !keep(i, j) {
            continue;
        }
        let q = residual.grid.point(i, j);
        let v = residual.samples[k];
        w.serialize((q.q1, q.q2, v.re, v.im)).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// One regression row of the effective-potential fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialSample {
    pub n_slices: usize,
    pub probe: usize,
    pub r: f64,
    pub theta: f64,
    /// `ħ² f / (2 m r²)`, the regressor multiplying `c`.
    pub x: f64,
    /// `ħ (f − ∫K f ρ)/ε − (Laplace–Beltrami f)`, Richardson-combined over `ε` and `ε/2`.
    pub y: f64,
}

/// Richardson-combined samples `y ≈ c x` for every probe and point.
///
/// With `D(ε) = ħ (f − ∫K_ε f ρ)/ε = Ĥf + O(ε)`, the combination `2D(ε/2) − D(ε)`
/// removes the first-order term.
pub fn effective_potential_samples(
    coarse: &dyn ProbeAction,
    fine: &dyn ProbeAction,
    probes: &[ModeProbe],
    points: &[Point2<f64>],
) -> Result<Vec<PotentialSample>> {
    let (ec, ef) = (coarse.time(), fine.time());
    if (2.0 * ef - ec).abs() > 1e-12 * ec {
        return Err(invalid("eps", "the fine kernel must use half the coarse step"));
    }
    if coarse.slices() != fine.slices() {
        return Err(invalid("N", "both kernels need the same slice count"));
    }
    let chart = coarse.chart();
    let u = coarse.units();
    let mut out = Vec::new();
    for &q in points {
        let vc = coarse.act_many(probes, q)?;
        let vf = fine.act_many(probes, q)?;
        let r = if chart.is_polar() {
            q.q1
        } else {
            q.cartesian_to_polar().q1
        };
        for (k, p) in probes.iter().enumerate() {
            let f = p.value(&chart, q)?;
            let lb = -u.kinetic_prefactor() * p.laplacian(&chart, q)?;
            let d = |v: f64, e: f64| u.hbar * (f - v) / e;
            let y = 2.0 * d(vf[k], ef) - d(vc[k], ec) - lb;
            if !y.is_finite() {
                return Err(Error::Numeric(format!("non-finite probe response at {q:?}")));
            }
            out.push(PotentialSample {
                n_slices: coarse.slices(),
                probe: k,
                r,
                theta: q.q2,
                x: u.hbar * u.hbar * f / (2.0 * u.mass * r * r),
                y,
            });
        }
    }
    Ok(out)
}

/// Fitted coefficient `c` of the spurious `c ħ²/(2 m r²)` term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectivePotentialFit {
    /// `c` itself, or its `N → ∞` limit when several slice counts are fitted.
    pub c: f64,
    pub ci95_half_width: f64,
    /// Coefficient of `1/N²` when slice counts are extrapolated.
    pub slope_in_inverse_n_sq: Option<f64>,
    pub fit: LinearFit,
    pub samples: usize,
}

impl EffectivePotentialFit {
    /// True when the 95% interval contains zero.
    pub fn consistent_with_zero(&self) -> bool {
        self.fit.covers_zero(0)
    }

    /// Ratio `|c| / CI half-width`.
    pub fn significance(&self) -> f64 {
        self.c.abs() / self.ci95_half_width
    }
}

/// Least-squares fit of `y = c x`, or of `y = (c + a/N²) x` when the samples span
/// several slice counts and `extrapolate` is set.
pub fn extract_effective_potential(samples: &[PotentialSample], extrapolate: bool) -> Result<EffectivePotentialFit> {
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            if extrapolate {
                let n2 = (s.n_slices * s.n_slices) as f64;
                vec![s.x, s.x / n2]
            } else {
                vec![s.x]
            }
        })
        .collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let fit = least_squares(&rows, &ys)?;
    Ok(EffectivePotentialFit {
        c: fit.coefficients[0],
        ci95_half_width: fit.ci95_half_width[0],
        slope_in_inverse_n_sq: extrapolate.then(|| fit.coefficients[1]),
        samples: samples.len(),
        fit,
    })
}

/// Effective-potential study of a kernel scheme at step `eps` (with `eps/2` for
/// Richardson), over the given slice counts.
pub fn effective_potential_study(
    scheme: KernelScheme,
    units: Units<f64>,
    eps: f64,
    slice_counts: &[usize],
    probes: &[ModeProbe],
    points: &[Point2<f64>],
) -> Result<EffectivePotentialFit> {
    if slice_counts.is_empty() {
        return Err(invalid("N", "need at least one slice count"));
    }
    let mut samples = Vec::new();
    for &n in slice_counts {
        let s = scheme.with_slices(n);
        let coarse = s.action(units, eps)?;
        let fine = s.action(units, eps / 2.0)?;
        samples.extend(effective_potential_samples(coarse.as_ref(), fine.as_ref(), probes, points)?);
    }
    extract_effective_potential(&samples, slice_counts.len() > 1)
}
