//! Finite-N replica of the short-time expansion that turns the scaled kernel into
//! a Schrödinger operator.
//!
//! After the momentum and δ-function integrations, slice `k` contributes through
//! `F_k = (2N − 1 − 2k) r + (2k + 1) r0`, and every `1/F_k^n` is written as a
//! β-integral `∫ β^{n−1} e^{−β F_k} dβ / (n−1)!`. At `r0 = r` these collapse to the
//! moments `M_n = n!/(2rN)^{n+1}`, and the sums over `k` only need
//! `Σ(2k + 1) = N²` and `Σ(2k + 1)²`.

use std::io::Write;
use std::ops::{Add, Mul};

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, Units};
use crate::grid::Wavefunction;
use crate::operators::laplace_beltrami_at;
use crate::stats::power_law_fit;

/// `Σ_{k=0}^{N−1} (2k + 1) = N²`.
pub fn sum_odd(n: u64) -> u128 {
    let n = n as u128;
    n * n
}

/// `Σ_{k=0}^{N−1} (2k + 1)²`, exactly and in its large-N form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OddSquares {
    /// `N(2N − 1)(2N + 1)/3`.
    pub exact: u128,
    /// `4N³/3`.
    pub asymptotic: f64,
    /// `asymptotic − exact = N/3`.
    pub difference: f64,
}

pub fn sum_odd_squares(n: u64) -> OddSquares {
    let m = n as u128;
    let exact = if m == 0 { 0 } else { m * (2 * m - 1) * (2 * m + 1) / 3 };
    let nf = n as f64;
    OddSquares {
        exact,
        asymptotic: 4.0 * nf * nf * nf / 3.0,
        difference: nf / 3.0,
    }
}

/// Largest moment order whose factorial fits a `u64`.
pub const MAX_MOMENT: u32 = 20;

/// `M_n = ∫₀^∞ β^n e^{−2βrN} dβ = n!/(2rN)^{n+1}`.
pub fn beta_moment(n: u32, r: f64, big_n: u64) -> Result<f64> {
    if n > MAX_MOMENT {
        return Err(invalid("n", format!("moment order above {MAX_MOMENT} overflows n!")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid("r", "must be a positive finite radius"));
    }
    if big_n == 0 {
        return Err(invalid("N", "must be ≥ 1"));
    }
    let fact: u64 = (1..=n as u64).product();
    let base = 2.0 * r * big_n as f64;
    Ok(fact as f64 / base.powi(n as i32 + 1))
}

/// How `Σ(2k + 1)²` enters the zeroth-derivative channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SumVariant {
    /// Every slice summed exactly.
    Exact,
    /// `Σ(2k + 1)²` replaced by `4N³/3` in the `ψ` channel.
    Asymptotic,
}

/// Coefficients of `ψ, ∂_rψ, ∂_r²ψ, ∂_θ²ψ` inside the bracket that multiplies `−ħ²/2m`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Channels {
    pub psi: f64,
    pub d_r: f64,
    pub d_rr: f64,
    pub d_thth: f64,
}

impl Add for Channels {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            psi: self.psi + o.psi,
            d_r: self.d_r + o.d_r,
            d_rr: self.d_rr + o.d_rr,
            d_thth: self.d_thth + o.d_thth,
        }
    }
}

impl Mul<f64> for Channels {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self {
            psi: self.psi * s,
            d_r: self.d_r * s,
            d_rr: self.d_rr * s,
            d_thth: self.d_thth * s,
        }
    }
}

/// `F_k = (2N − 1 − 2k) r + (2k + 1) r0`.
pub fn f_k(k: u64, big_n: u64, r: f64, r0: f64) -> f64 {
    (2 * big_n - 1 - 2 * k) as f64 * r + (2 * k + 1) as f64 * r0
}

fn check_slice(k: u64, big_n: u64) -> Result<()> {
    if big_n == 0 {
        return Err(invalid("N", "must be ≥ 1"));
    }
    if k >= big_n {
        return Err(invalid("k", format!("slice index {k} outside 0..{big_n}")));
    }
    Ok(())
}

/// Bracket coefficients contributed by slice `k` at radius `r`.
///
/// The `β` weight of each moment is kept: the angular term is `2N·2·M_1`, and the
/// radial terms come from expanding `(r0 r + r0²) e^{−β r0 (2k+1)} ψ(r0)` to second
/// order around `r0 = r`.
pub fn xk_channels(k: u64, big_n: u64, r: f64) -> Result<Channels> {
    check_slice(k, big_n)?;
    let m1 = beta_moment(1, r, big_n)?;
    let m2 = beta_moment(2, r, big_n)?;
    let m3 = beta_moment(3, r, big_n)?;
    let a = (2 * k + 1) as f64;
    let two_n = 2.0 * big_n as f64;
    Ok(Channels {
        psi: two_n * (-6.0 * r * a * m2 + 2.0 * r * r * a * a * m3 + 2.0 * m1),
        d_r: two_n * (-4.0 * r * r * a * m2 + 6.0 * r * m1),
        d_rr: two_n * 2.0 * r * r * m1,
        d_thth: two_n * 2.0 * m1,
    })
}

/// Bracket coefficients summed over all slices.
pub fn generator_channels(big_n: u64, r: f64, variant: SumVariant) -> Result<Channels> {
    if big_n == 0 {
        return Err(invalid("N", "must be ≥ 1"));
    }
    let exact = (0..big_n).try_fold(Channels::default(), |acc, k| Ok::<_, Error>(acc + xk_channels(k, big_n, r)?))?;
    Ok(match variant {
        SumVariant::Exact => exact,
        SumVariant::Asymptotic => {
            let two_n = 2.0 * big_n as f64;
            let m3 = beta_moment(3, r, big_n)?;
            let s = sum_odd_squares(big_n);
            // swap the exact Σ(2k+1)² for its large-N form in the ψ channel only
            Channels {
                psi: exact.psi + two_n * 2.0 * r * r * m3 * s.difference,
                ..exact
            }
        }
    })
}

struct Derivs {
    psi: Complex<f64>,
    d_r: Complex<f64>,
    d_rr: Complex<f64>,
    d_thth: Complex<f64>,
}

fn derivs(psi: &Wavefunction<f64>, i: usize, j: usize) -> Result<Derivs> {
    if !psi.grid.chart.is_polar() {
        return Err(invalid("chart", "the generator replica lives on the polar chart"));
    }
    Ok(Derivs {
        psi: psi.at(i, j),
        d_r: psi.d1(i, j, 0)?,
        d_rr: psi.d2(i, j, 0)?,
        d_thth: psi.d2(i, j, 1)?,
    })
}

fn contract(c: &Channels, d: &Derivs, units: Units<f64>) -> Complex<f64> {
    -(d.psi * c.psi + d.d_r * c.d_r + d.d_rr * c.d_rr + d.d_thth * c.d_thth) * units.kinetic_prefactor()
}

/// Contribution of slice `k` to `G_N ψ` at a grid node.
pub fn xk_apply(k: u64, big_n: u64, psi: &Wavefunction<f64>, at: Point2<f64>, units: Units<f64>) -> Result<Complex<f64>> {
    let (i, j) = psi.grid.node_of(at)?;
    let d = derivs(psi, i, j)?;
    let r = psi.grid.a1.node(i);
    Ok(contract(&xk_channels(k, big_n, r)?, &d, units))
}

/// `G_N ψ` at one node, split by channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorPoint {
    pub r: f64,
    pub theta: f64,
    pub generator: f64,
    pub target: f64,
    /// `|G_N ψ − target| / |target|`.
    pub rel_residual: f64,
    pub channels: Channels,
    /// `−(ħ²/2m) c_θθ ∂_θ²ψ`, the angular part of `G_N ψ`.
    pub angular: f64,
    /// `−(ħ²/2m) (1/r²) ∂_θ²ψ`.
    pub angular_target: f64,
}

/// Finite-N generator against `−(ħ²/2m)∇²ψ` at a set of grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveGeneratorReport {
    #[serde(rename = "N")]
    pub n: u64,
    pub variant: SumVariant,
    pub points: Vec<GeneratorPoint>,
    /// `‖G_N ψ − target‖₂ / ‖target‖₂` over the points.
    pub residual_l2: f64,
    /// Largest pointwise relative residual.
    pub residual_max: f64,
    /// Order in `1/N` fitted over a study, when one was run.
    pub fitted_order: Option<f64>,
}

/// Evaluates `G_N ψ` at the grid nodes `at` and compares with the
/// Laplace–Beltrami operator applied on the same grid.
///
/// Real parts are reported; test wavefunctions are real.
pub fn effective_generator(
    big_n: u64,
    psi: &Wavefunction<f64>,
    at: &[Point2<f64>],
    units: Units<f64>,
    variant: SumVariant,
) -> Result<EffectiveGeneratorReport> {
    if big_n == 0 {
        return Err(invalid("N", "must be ≥ 1"));
    }
    if at.is_empty() {
        return Err(invalid("points", "need at least one evaluation point"));
    }
    let mut points = Vec::with_capacity(at.len());
    let (mut num, mut den, mut worst) = (0.0, 0.0, 0.0f64);
    for &q in at {
        let (i, j) = psi.grid.node_of(q)?;
        let r = psi.grid.a1.node(i);
        let d = derivs(psi, i, j)?;
        let c = generator_channels(big_n, r, variant)?;
        let g = contract(&c, &d, units).re;
        let t = laplace_beltrami_at(psi, i, j, units)?.re;
        let kp = units.kinetic_prefactor();
        let diff = g - t;
        let rel = diff.abs() / t.abs();
        if !rel.is_finite() {
            return Err(Error::Numeric(format!("target vanishes at r = {r}")));
        }
        num += diff * diff;
        den += t * t;
        worst = worst.max(rel);
        points.push(GeneratorPoint {
            r,
            theta: psi.grid.a2.node(j),
            generator: g,
            target: t,
            rel_residual: rel,
            channels: c,
            angular: -kp * c.d_thth * d.d_thth.re,
            angular_target: -kp * d.d_thth.re / (r * r),
        });
    }
    Ok(EffectiveGeneratorReport {
        n: big_n,
        variant,
        points,
        residual_l2: (num / den).sqrt(),
        residual_max: worst,
        fitted_order: None,
    })
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub residual: f64,
    /// `log(res_prev/res)/log(N/N_prev)`; absent on the first row.
    pub order_estimate: Option<f64>,
}

/// Generator reports over an increasing sequence of slice counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorStudy {
    pub reports: Vec<EffectiveGeneratorReport>,
    pub table: Vec<ConvergenceRow>,
    /// Negated log-log slope of `residual_l2` against `N`.
    pub fitted_order: f64,
}

pub fn effective_generator_study(
    slice_counts: &[u64],
    psi: &Wavefunction<f64>,
    at: &[Point2<f64>],
    units: Units<f64>,
    variant: SumVariant,
) -> Result<GeneratorStudy> {
    if slice_counts.len() < 2 || slice_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("N", "need an increasing sequence of at least two slice counts"));
    }
    let mut reports = slice_counts
        .par_iter()
        .map(|&n| effective_generator(n, psi, at, units, variant))
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<f64> = slice_counts.iter().map(|&n| n as f64).collect();
    let res: Vec<f64> = reports.iter().map(|r| r.residual_l2).collect();
    let fit = power_law_fit(&ns, &res)?;
    let order = -fit.exponent;
    for r in &mut reports {
        r.fitted_order = Some(order);
    }
    let table = (0..reports.len())
        .map(|k| ConvergenceRow {
            n: slice_counts[k],
            residual: res[k],
            order_estimate: (k > 0).then(|| (res[k - 1] / res[k]).ln() / (ns[k] / ns[k - 1]).ln()),
        })
        .collect();
    Ok(GeneratorStudy {
        reports,
        table,
        fitted_order: order,
    })
}

/// Writes `N, residual, order_estimate` rows; the first order estimate is empty.
pub fn write_convergence_csv<W: Write>(out: W, rows: &[ConvergenceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["N", "residual", "order_estimate"]).map_err(fmt)?;
    for r in rows {
        let o = r.order_estimate.map(|o| o.to_string()).unwrap_or_default();
        w.write_record([r.n.to_string(), r.residual.to_string(), o]).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}
