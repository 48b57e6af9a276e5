//! The unscaled canonical path integral in Euclidean time.
//!
//! Each slice's momentum integrals are Gaussian and are done in closed form, which
//! gives [`short_time_kernel`]. Slices are then composed over a coordinate grid
//! ([`iterate_kernel`], Chapman–Kolmogorov with measure weights) or sampled with
//! Brownian-bridge paths ([`monte_carlo_kernel`]).

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::generators::{Hamiltonian, PseudoHamiltonian};
use crate::geometry::{angle_diff, Chart, ChartKind, Point2, Units};
use crate::grid::{Axis, Grid2};
use crate::scalar::Real;
use crate::stats::{power_law_fit, PowerLaw};

/// Kernel factors below `e^{-CUTOFF}` of their peak are dropped from sparse transfer matrices.
pub const EXP_CUTOFF: f64 = 40.0;

/// Mass-loss fraction above which a composition is flagged.
pub const MASS_LOSS_LIMIT: f64 = 0.01;

/// How the coordinate integrals between slices are done.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Product trapezoid grid. For the polar chart nodes cover `[r_min, r_max] × [0, 2π)`;
    /// for the Cartesian chart `n_r × n_r` nodes cover `[−r_max, r_max]²` and `n_theta` is unused.
    Grid { n_r: usize, n_theta: usize, r_max: f64 },
    /// Importance-sampled paths with a fixed seed.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Slice count `N`, slice step `ε`, and the quadrature used between slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceConfig {
    pub n_slices: usize,
    pub eps: f64,
    pub quadrature: Quadrature,
}

impl SliceConfig {
    pub fn new(n_slices: usize, eps: f64, quadrature: Quadrature) -> Result<Self> {
        let c = Self {
            n_slices,
            eps,
            quadrature,
        };
        c.validate(&Chart::polar())?;
        Ok(c)
    }

    pub fn validate(&self, chart: &Chart<f64>) -> Result<()> {
        if self.n_slices < 1 {
            return Err(invalid("N", "slice count must be ≥ 1"));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(invalid("eps", "step must be a positive finite number"));
        }
        match self.quadrature {
            Quadrature::Grid { n_r, n_theta, r_max } => {
                if n_r < 8 || (chart.is_polar() && n_theta < 8) {
                    return Err(invalid("grid", "grid sizes must be ≥ 8"));
                }
                if !(r_max > chart.r_min) || !r_max.is_finite() {
                    return Err(invalid("r_max", format!("must exceed r_min = {}", chart.r_min)));
                }
            }
            Quadrature::MonteCarlo { samples, .. } => {
                if samples == 0 {
                    return Err(invalid("samples", "must be ≥ 1"));
                }
            }
        }
        Ok(())
    }

    /// Total Euclidean time `N ε`.
    pub fn total_time(&self) -> f64 {
        self.n_slices as f64 * self.eps
    }

    /// The coordinate grid described by a grid quadrature.
    pub fn grid(&self, chart: &Chart<f64>) -> Result<Grid2<f64>> {
        match self.quadrature {
            Quadrature::Grid { n_r, n_theta, r_max } => match chart.kind {
                ChartKind::Polar2d => Grid2::polar(*chart, chart.r_min, r_max, n_r, n_theta),
                ChartKind::Cartesian2d => Grid2::cartesian_square(-r_max, r_max, n_r),
            },
            Quadrature::MonteCarlo { .. } => Err(invalid("quadrature", "Monte-Carlo mode has no grid")),
        }
    }
}

/// Normal density with variance `var`.
#[inline]
fn gauss<T: Real>(d: T, var: T) -> T {
    (-d * d / (T::lit(2.0) * var)).exp() / (T::TAU() * var).sqrt()
}

/// Normal density of an angle difference, periodised over `2π`.
///
/// Narrow widths sum images; wide ones use the Fourier series of the wrapped normal.
pub fn wrapped_gauss<T: Real>(d: T, var: T) -> T {
    let d = angle_diff(d, T::zero());
    if var < T::one() {
        let sd = var.sqrt();
        let k = (T::lit(9.0) * sd / T::TAU()).ceil().to_isize().unwrap_or(0) + 1;
        (-k..=k).map(|m| gauss(d + T::TAU() * T::from_isize(m).unwrap(), var)).sum()
    } else {
        let mut acc = T::lit(0.5);
        let mut l = 1usize;
        loop {
            let lf = T::from_usize_lossy(l);
            let damp = (-lf * lf * var * T::lit(0.5)).exp();
            if damp < T::lit(1e-18) {
                break;
            }
            acc = acc + damp * (lf * d).cos();
            l += 1;
        }
        acc / T::PI()
    }
}

/// Closed-form momentum integral of one slice, split into its factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceGaussian<T> {
    /// Variance of the `q1` step.
    pub var1: T,
    /// Variance of the `q2` step.
    pub var2: T,
    /// `(ρ(q2) ρ(q1))^{-1/2}`.
    pub prefactor: T,
    /// `exp(ε E (α2 + α1)/2ħ) · exp(−ε (α2 V2 + α1 V1)/2ħ)`.
    pub weight: T,
}

/// Gaussian parameters of the Euclidean short-time propagator.
///
/// With the slice exponent `−(ε/2ħ)(h(q2) + h(q1))`, the `P` integral has
/// variance `ħ ε (α2 g¹¹(q2) + α1 g¹¹(q1)) / 2m` and likewise for `p`.
pub fn slice_gaussian<T: Real>(q2: Point2<T>, q1: Point2<T>, eps: T, h: &PseudoHamiltonian<T>) -> Result<SliceGaussian<T>> {
    if !(eps > T::zero()) {
        return Err(invalid("eps", "step must be positive"));
    }
    let chart = h.chart();
    chart.check_grid(q2)?;
    chart.check_grid(q1)?;
    let u = h.units();
    let form = h.slice_form(q2, q1)?;
    if !(form.a_big > T::zero() && form.a_small > T::zero()) {
        return Err(Error::NotPositiveDefinite(format!(
            "momentum form coefficients ({}, {}) at {q2:?}, {q1:?}",
            form.a_big, form.a_small
        )));
    }
    let c = u.hbar * eps / (T::lit(2.0) * u.mass);
    let rho = chart.density(q2)? * chart.density(q1)?;
    let half = eps / (T::lit(2.0) * u.hbar);
    Ok(SliceGaussian {
        var1: c * form.a_big,
        var2: c * form.a_small,
        prefactor: rho.sqrt().recip(),
        weight: (half * (h.energy * form.alpha_sum - form.potential_sum)).exp(),
    })
}

/// Euclidean canonical short-time propagator `K_ε(q2; q1)`.
///
/// Angles are periodised, so on the polar chart the result is a function on the circle.
pub fn short_time_kernel<T: Real>(chart: &Chart<T>, q2: Point2<T>, q1: Point2<T>, eps: T, h: &PseudoHamiltonian<T>) -> Result<T> {
    if chart.kind != h.chart().kind {
        return Err(invalid("chart", "chart differs from the Hamiltonian's chart"));
    }
    let g = slice_gaussian(q2, q1, eps, h)?;
    let ang = match chart.kind {
        ChartKind::Polar2d => wrapped_gauss(q2.q2 - q1.q2, g.var2),
        ChartKind::Cartesian2d => gauss(q2.q2 - q1.q2, g.var2),
    };
    Ok(g.prefactor * g.weight * gauss(q2.q1 - q1.q1, g.var1) * ang)
}

/// The same propagator on the angular cover: `q2 − q1` taken literally, no images.
pub fn short_time_kernel_sheet<T: Real>(q2: Point2<T>, q1: Point2<T>, eps: T, h: &PseudoHamiltonian<T>) -> Result<T> {
    let g = slice_gaussian(q2, q1, eps, h)?;
    Ok(g.prefactor * g.weight * gauss(q2.q1 - q1.q1, g.var1) * gauss(q2.q2 - q1.q2, g.var2))
}

/// Sampled propagator: one column `K(·; q0)` over the grid per source point `q0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    pub grid: Grid2<f64>,
    /// Total Euclidean time (or pseudo-time) covered.
    pub time: f64,
    pub n_slices: usize,
    pub eps: f64,
    pub sources: Vec<Point2<f64>>,
    /// `values[s * grid.len() + k]` is `K(q_k; sources[s])`.
    pub values: Vec<f64>,
    /// Measure weights `ρ(q) Δq1 Δq2` of the grid nodes.
    pub weights: Vec<f64>,
    /// `1 − ∫ K(q; q0) ρ(q) dq` per source.
    pub mass_loss: Vec<f64>,
}

impl KernelGrid {
    pub fn column(&self, s: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[s * n..(s + 1) * n]
    }

    /// `K(q; sources[s])` at a grid node.
    pub fn value_at(&self, s: usize, q: Point2<f64>) -> Result<f64> {
        let (i, j) = self.grid.node_of(q)?;
        Ok(self.column(s)[self.grid.index(i, j)])
    }

    /// Largest mass-loss fraction over sources.
    pub fn max_mass_loss(&self) -> f64 {
        self.mass_loss.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// True when truncation absorbed more than [`MASS_LOSS_LIMIT`] of some column.
    pub fn mass_loss_exceeded(&self) -> bool {
        self.max_mass_loss() > MASS_LOSS_LIMIT
    }

    /// Writes `r, theta, r0, theta0, value` rows (Cartesian grids store `x, y` in the
    /// first two columns of each pair). `meta` lines are written first as `# key=value`.
    pub fn write_csv<W: Write>(&self, out: W, meta: &[(String, String)]) -> Result<()> {
        let mut out = out;
        for (k, v) in meta {
            writeln!(out, "# {k}={v}").map_err(io_err)?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "theta", "r0", "theta0", "value"]).map_err(csv_err)?;
        for (s, src) in self.sources.iter().enumerate() {
            for (k, v) in self.column(s).iter().enumerate() {
                let q = self.grid.point_at(k);
                w.serialize((q.q1, q.q2, src.q1, src.q2, v)).map_err(csv_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Binary dump. Header of little-endian 64-bit words: chart code, `N`, `ε` (f64 bits),
    /// `n1`, `n2`, source count, then the axis origins and steps and the source
    /// coordinates (f64 bits); payload: the values, row-major, as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut words: Vec<u64> = vec![
            self.grid.chart.kind.code(),
            self.n_slices as u64,
            self.eps.to_bits(),
            self.grid.a1.n as u64,
            self.grid.a2.n as u64,
            self.sources.len() as u64,
            self.time.to_bits(),
            self.grid.a1.lo.to_bits(),
            self.grid.a1.step.to_bits(),
            self.grid.a2.lo.to_bits(),
            self.grid.a2.step.to_bits(),
        ];
        for s in &self.sources {
            words.push(s.q1.to_bits());
            words.push(s.q2.to_bits());
        }
        words.extend(self.values.iter().map(|v| v.to_bits()));
        for w in words {
            out.write_all(&w.to_le_bytes()).map_err(io_err)?;
        }
        Ok(())
    }

    /// Reads back a [`KernelGrid::write_binary`] dump. Weights and mass loss are recomputed.
    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(io_err)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("binary kernel dump length is not a multiple of 8".into()));
        }
        let words: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if words.len() < 11 {
            return Err(Error::Format("truncated header".into()));
        }
        let kind = ChartKind::from_code(words[0])?;
        let (n1, n2, ns) = (words[3] as usize, words[4] as usize, words[5] as usize);
        let f = |k: usize| f64::from_bits(words[k]);
        let chart = Chart::from_kind(kind);
        let a1 = Axis {
            lo: f(7),
            step: f(8),
            n: n1,
            periodic: false,
        };
        let a2 = Axis {
            lo: f(9),
            step: f(10),
            n: n2,
            periodic: kind == ChartKind::Polar2d,
        };
        let expected = 11 + 2 * ns + n1 * n2 * ns;
        if words.len() != expected {
            return Err(Error::Format(format!(
                "binary kernel dump has {} words, header implies {expected}",
                words.len()
            )));
        }
        let sources = (0..ns).map(|s| Point2::new(f(11 + 2 * s), f(12 + 2 * s))).collect();
        let values = words[11 + 2 * ns..].iter().map(|&w| f64::from_bits(w)).collect();
        let grid = Grid2 { chart, a1, a2 };
        let weights = grid.measure_weights(|q| chart.density(q))?;
        let mut kg = Self {
            grid,
            time: f(6),
            n_slices: words[1] as usize,
            eps: f(2),
            sources,
            values,
            weights,
            mass_loss: vec![],
        };
        kg.mass_loss = (0..ns).map(|s| kg.mass_loss_of(s)).collect();
        Ok(kg)
    }

    fn mass_loss_of(&self, s: usize) -> f64 {
        1.0 - self.column(s).iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>()
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Sparse row-major matrix `T[q][q'] = K_ε(q; q') w(q')`.
struct Transfer {
    rows: Vec<Vec<(u32, f64)>>,
}

impl Transfer {
    fn build(grid: &Grid2<f64>, weights: &[f64], eps: f64, h: &PseudoHamiltonian<f64>) -> Result<Self> {
        let chart = grid.chart;
        let u = *h.units();
        // largest coordinate-1 step variance bounds which rows can couple
        let a_max = (0..grid.a1.n)
            .map(|i| {
                let q = grid.point(i, 0);
                Ok(h.alpha.eval(&chart, q)? * chart.metric_inverse(q)?[0][0])
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0f64, f64::max);
        let var_max = u.hbar * eps * a_max / u.mass;
        let reach = ((2.0 * EXP_CUTOFF * var_max).sqrt() / grid.a1.step).ceil() as usize + 1;
        let rows = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = grid.unindex(k);
                let q = grid.point(i, j);
                let mut row = Vec::new();
                let lo = i.saturating_sub(reach);
                let hi = (i + reach).min(grid.a1.n - 1);
                for i2 in lo..=hi {
                    let probe = grid.point(i2, j);
                    let g = slice_gaussian(q, probe, eps, h)?;
                    let d1 = q.q1 - probe.q1;
                    if d1 * d1 / (2.0 * g.var1) > EXP_CUTOFF {
                        continue;
                    }
                    for j2 in 0..grid.a2.n {
                        let q2 = grid.point(i2, j2);
                        if chart.kind == ChartKind::Cartesian2d {
                            let d2 = q.q2 - q2.q2;
                            if (d1 * d1 + d2 * d2) / (2.0 * g.var1) > EXP_CUTOFF {
                                continue;
                            }
                        }
                        let v = short_time_kernel(&chart, q, q2, eps, h)? * weights[grid.index(i2, j2)];
                        if v > 0.0 {
                            row.push((grid.index(i2, j2) as u32, v));
                        }
                    }
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .par_iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c as usize]).sum())
            .collect()
    }
}

/// Composes `N` short-time kernels on the grid of a grid quadrature.
///
/// Column `s` starts as `K_ε(·; sources[s])` and is propagated `N − 1` times with the
/// measure-weighted transfer matrix, so `N = 1` returns the short-time kernel itself.
pub fn iterate_kernel(config: &SliceConfig, h: &PseudoHamiltonian<f64>, sources: &[Point2<f64>]) -> Result<KernelGrid> {
    let chart = *h.chart();
    config.validate(&chart)?;
    let grid = config.grid(&chart)?;
    if sources.is_empty() {
        return Err(invalid("sources", "at least one source point is needed"));
    }
    let weights = grid.measure_weights(|q| chart.density(q))?;
    let eps = config.eps;
    let n = grid.len();
    let mut values = Vec::with_capacity(n * sources.len());
    let transfer = if config.n_slices > 1 {
        Some(Transfer::build(&grid, &weights, eps, h)?)
    } else {
        None
    };
    for &src in sources {
        let mut col = (0..n)
            .into_par_iter()
            .map(|k| short_time_kernel(&chart, grid.point_at(k), src, eps, h))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(t) = &transfer {
            for _ in 1..config.n_slices {
                col = t.apply(&col);
            }
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite kernel value during composition".into()));
        }
        values.extend(col);
    }
    let mut kg = KernelGrid {
        grid,
        time: config.total_time(),
        n_slices: config.n_slices,
        eps,
        sources: sources.to_vec(),
        values,
        weights,
        mass_loss: vec![],
    };
    kg.mass_loss = (0..sources.len()).map(|s| kg.mass_loss_of(s)).collect();
    Ok(kg)
}

/// `∫ K_a(q; q'') K_b(q''; q0) ρ(q'') dq''` for every column of `b`, with `a` sampled
/// as an operator on the grid.
///
/// `a` must share `b`'s grid and carry every grid node as a source, in grid order.
pub fn compose(a: &KernelGrid, b: &KernelGrid) -> Result<KernelGrid> {
    if a.grid != b.grid {
        return Err(invalid("grid", "kernels live on different grids"));
    }
    let n = a.grid.len();
    if a.sources.len() != n {
        return Err(invalid("sources", "the left factor needs every grid node as a source"));
    }
    let mut values = Vec::with_capacity(b.values.len());
    for s in 0..b.sources.len() {
        let col = b.column(s);
        let out: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| (0..n).map(|m| a.values[m * n + k] * b.weights[m] * col[m]).sum())
            .collect();
        values.extend(out);
    }
    let mut kg = KernelGrid {
        grid: b.grid.clone(),
        time: a.time + b.time,
        n_slices: a.n_slices + b.n_slices,
        eps: b.eps,
        sources: b.sources.clone(),
        values,
        weights: b.weights.clone(),
        mass_loss: vec![],
    };
    kg.mass_loss = (0..kg.sources.len()).map(|s| kg.mass_loss_of(s)).collect();
    Ok(kg)
}

/// Integrand of a sliced path integral over the interior points of a path.
pub trait PathIntegrand: Sync {
    fn chart(&self) -> Chart<f64>;
    fn units(&self) -> Units<f64>;
    fn slices(&self) -> usize;
    /// Total Euclidean time.
    fn time(&self) -> f64;
    /// Density with respect to `∏ dq_k` over the `N − 1` interior points;
    /// `path[0] = q0`, `path[N] = q`, angles unwrapped along the path.
    fn eval(&self, path: &[Point2<f64>]) -> Result<f64>;
}

/// The unscaled integrand `∏_j K_ε(q_{j+1}; q_j) ∏_k ρ(q_k)` on the angular cover.
#[derive(Debug, Clone, Copy)]
pub struct UnscaledPath {
    pub h: PseudoHamiltonian<f64>,
    pub n_slices: usize,
    pub eps: f64,
}

impl UnscaledPath {
    pub fn free(chart: Chart<f64>, units: Units<f64>, n_slices: usize, eps: f64) -> Self {
        Self {
            h: PseudoHamiltonian::unscaled(Hamiltonian::free(chart, units)),
            n_slices,
            eps,
        }
    }
}

impl PathIntegrand for UnscaledPath {
    fn chart(&self) -> Chart<f64> {
        *self.h.chart()
    }

    fn units(&self) -> Units<f64> {
        *self.h.units()
    }

    fn slices(&self) -> usize {
        self.n_slices
    }

    fn time(&self) -> f64 {
        self.eps * self.n_slices as f64
    }

    fn eval(&self, path: &[Point2<f64>]) -> Result<f64> {
        let chart = self.chart();
        let mut w = 1.0;
        for pair in path.windows(2) {
            w *= short_time_kernel_sheet(pair[1], pair[0], self.eps, &self.h)?;
        }
        for &q in &path[1..path.len() - 1] {
            w *= chart.density(q)?;
        }
        Ok(w)
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Fraction of proposed paths that left the chart domain.
    pub rejected: f64,
}

/// Angular windings of the final point summed by [`monte_carlo_kernel`].
pub const MC_WINDINGS: i64 = 2;

fn to_plane(chart: &Chart<f64>, q: Point2<f64>) -> Point2<f64> {
    if chart.is_polar() {
        q.polar_to_cartesian()
    } else {
        q
    }
}

/// Estimates `K(q; q0)` by importance sampling interior points along a Cartesian
/// Brownian bridge from `q0` to `q` with step variance `ħτ/(N m)`.
///
/// On the polar chart interior angles are unwrapped step by step and the final
/// angle is summed over `|w| ≤` [`MC_WINDINGS`] turns, so the estimate is periodic.
pub fn monte_carlo_kernel(
    integrand: &dyn PathIntegrand,
    q: Point2<f64>,
    q0: Point2<f64>,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let chart = integrand.chart();
    chart.check_grid(q)?;
    chart.check_grid(q0)?;
    if samples < 2 {
        return Err(invalid("samples", "need at least two samples for an error estimate"));
    }
    let n = integrand.slices();
    let u = integrand.units();
    let s2 = u.hbar * integrand.time() / (n as f64 * u.mass);
    let (x0, x) = (to_plane(&chart, q0), to_plane(&chart, q));
    let windings: Vec<i64> = if chart.is_polar() {
        (-MC_WINDINGS..=MC_WINDINGS).collect()
    } else {
        vec![0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut rejected = 0usize;
    let mut path = vec![q0; n + 1];
    let mut plane = vec![x0; n + 1];
    for _ in 0..samples {
        let mut log_p = 0.0;
        let mut jac = 1.0;
        let mut ok = true;
        for k in 1..n {
            let prev = plane[k - 1];
            let left = (n - k + 1) as f64;
            let mean_x = prev.q1 + (x.q1 - prev.q1) / left;
            let mean_y = prev.q2 + (x.q2 - prev.q2) / left;
            let var = s2 * (left - 1.0) / left;
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            let p = Point2::new(mean_x + var.sqrt() * zx, mean_y + var.sqrt() * zy);
            plane[k] = p;
            if chart.is_polar() {
                let pol = p.cartesian_to_polar();
                if pol.q1 < chart.r_min {
                    ok = false;
                    break;
                }
                let th = path[k - 1].q2 + angle_diff(pol.q2, path[k - 1].q2);
                path[k] = Point2::polar(pol.q1, th);
                jac *= pol.q1;
            } else {
                path[k] = p;
            }
            log_p += -(zx * zx + zy * zy) / 2.0 - (std::f64::consts::TAU * var).ln();
        }
        if !ok {
            rejected += 1;
            continue;
        }
        // the product of the sequential conditionals is the bridge density itself
        let p_path = log_p.exp();
        let mut w = 0.0;
        if n == 1 {
            for &wn in &windings {
                path[1] = Point2::new(q.q1, q.q2 + std::f64::consts::TAU * wn as f64);
                w += integrand.eval(&path)?;
            }
        } else {
            let base = if chart.is_polar() {
                path[n - 1].q2 + angle_diff(q.q2, path[n - 1].q2)
            } else {
                q.q2
            };
            for &wn in &windings {
                path[n] = Point2::new(q.q1, base + std::f64::consts::TAU * wn as f64);
                w += integrand.eval(&path)?;
            }
            w /= p_path * jac;
        }
        sum += w;
        sum_sq += w * w;
    }
    let mean = sum / samples as f64;
    let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / (samples as f64 - 1.0)).sqrt(),
        rejected: rejected as f64 / samples as f64,
    })
}

/// Probe functions for [`delta_limit_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaLimitRow {
    pub eps: f64,
    pub probe: usize,
    pub value: f64,
    pub expected: f64,
    pub rel_error: f64,
}

/// Convergence of `∫ K_ε(q; q0) f(q0) ρ(q0) dq0 → f(q)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaLimitReport {
    pub rows: Vec<DeltaLimitRow>,
    /// Power law of the largest error at each `ε`.
    pub fit: Option<PowerLaw>,
}

/// Applies the short-time kernel at each `ε` to a battery of probe functions at `q`.
pub fn delta_limit_check(
    h: &PseudoHamiltonian<f64>,
    q: Point2<f64>,
    eps_sequence: &[f64],
    probes: &[crate::probe::ModeProbe],
) -> Result<DeltaLimitReport> {
    use crate::probe::{ProbeAction, SlicedAction};
    if eps_sequence.windows(2).any(|w| !(w[1] < w[0])) || eps_sequence.iter().any(|&e| !(e > 0.0)) {
        return Err(invalid("eps", "sequence must be positive and decreasing"));
    }
    let mut rows = Vec::new();
    let mut worst = Vec::new();
    for &eps in eps_sequence {
        let action = SlicedAction::unscaled(*h, 1, eps)?;
        let values = action.act_many(probes, q)?;
        let mut w = 0.0f64;
        for (k, (p, v)) in probes.iter().zip(values).enumerate() {
            let f = p.value(&h.base.chart, q)?;
            let rel = (v - f).abs() / f.abs().max(1e-300);
            w = w.max(rel);
            rows.push(DeltaLimitRow {
                eps,
                probe: k,
                value: v,
                expected: f,
                rel_error: rel,
            });
        }
        worst.push(w);
    }
    let fit = if eps_sequence.len() >= 2 && worst.iter().all(|&w| w > 0.0) {
        Some(power_law_fit(eps_sequence, &worst)?)
    } else {
        None
    };
    Ok(DeltaLimitReport { rows, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::heat_kernel_cartesian;
    use crate::quad;
    use approx::assert_relative_eq;

    fn free(chart: Chart<f64>) -> PseudoHamiltonian<f64> {
        PseudoHamiltonian::unscaled(Hamiltonian::free(chart, Units::default()))
    }

    #[test]
    fn cartesian_step_is_heat_kernel() {
        let h = free(Chart::cartesian());
        let k = short_time_kernel(&Chart::cartesian(), Point2::new(0.0, 0.0), Point2::new(0.0, 0.0), 1.0, &h).unwrap();
        assert_relative_eq!(k, 1.0 / std::f64::consts::TAU, max_relative = 1e-14);
        let (a, b) = (Point2::new(0.3, -0.2), Point2::new(-0.1, 0.5));
        let k = short_time_kernel(&Chart::cartesian(), a, b, 0.25, &h).unwrap();
        let exact = heat_kernel_cartesian(a, b, 0.25, Units::default()).unwrap();
        assert_relative_eq!(k, exact, max_relative = 1e-13);
    }

    /// `∫ dP/2πħ cos(PΔ/ħ) e^{−ε a P²/(4mħ)}` done numerically for each momentum.
    fn momentum_integral(delta: f64, eps: f64, a: f64) -> f64 {
        let c = eps * a / 4.0;
        quad::integrate_to_infinity(|p| (p * delta).cos() * (-c * p * p).exp(), 0.0, 1e-13, 1e-300).unwrap() * 2.0
            / std::f64::consts::TAU
    }

    #[test]
    fn polar_closed_form_matches_momentum_quadrature() {
        let h = free(Chart::polar());
        for &(q2, q1, eps) in &[
            (Point2::polar(1.0, 0.0), Point2::polar(1.0, 0.0), 0.1),
            (Point2::polar(1.1, 0.1), Point2::polar(0.95, -0.05), 0.05),
        ] {
            let a_big = 2.0;
            let a_small = 1.0 / (q2.q1 * q2.q1) + 1.0 / (q1.q1 * q1.q1);
            let numeric = momentum_integral(q2.q1 - q1.q1, eps, a_big) * momentum_integral(q2.q2 - q1.q2, eps, a_small)
                / (q2.q1 * q1.q1).sqrt();
            let closed = short_time_kernel_sheet(q2, q1, eps, &h).unwrap();
            assert_relative_eq!(closed, numeric, max_relative = 1e-10);
        }
    }

    #[test]
    fn wrapped_normal_branches_agree() {
        for &d in &[0.0, 0.7, 3.0, -2.5] {
            for &var in &[0.9999, 1.0] {
                let a = wrapped_gauss(d, var);
                let images: f64 = (-8..=8).map(|m| gauss(d + std::f64::consts::TAU * m as f64, var)).sum();
                assert_relative_eq!(a, images, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn scaled_energy_weight_and_domain() {
        let base = Hamiltonian::free(Chart::polar(), Units::default());
        let h = PseudoHamiltonian::new(base, crate::ScalingFunction::SqrtG, 0.5).unwrap();
        let g = slice_gaussian(Point2::polar(2.0, 0.0), Point2::polar(1.0, 0.0), 0.1, &h).unwrap();
        assert_relative_eq!(g.weight, (0.1 * 0.5 * 3.0 / 2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g.var1, 0.1 * 3.0 / 2.0, max_relative = 1e-14);
        assert!(matches!(
            short_time_kernel(&Chart::polar(), Point2::polar(0.0, 0.0), Point2::polar(1.0, 0.0), 0.1, &h),
            Err(Error::Domain(_))
        ));
    }

    fn cart_config(n: usize, tau: f64, nodes: usize) -> SliceConfig {
        SliceConfig::new(
            n,
            tau / n as f64,
            Quadrature::Grid {
                n_r: nodes,
                n_theta: nodes,
                r_max: 6.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn single_slice_is_the_short_time_kernel() {
        let h = free(Chart::cartesian());
        let cfg = cart_config(1, 0.5, 16);
        let src = Point2::new(0.0, 0.0);
        let kg = iterate_kernel(&cfg, &h, &[src]).unwrap();
        for k in 0..kg.grid.len() {
            let q = kg.grid.point_at(k);
            assert_eq!(kg.column(0)[k], short_time_kernel(&Chart::cartesian(), q, src, 0.5, &h).unwrap());
        }
    }

    #[test]
    fn cartesian_composition_is_symmetric_and_positive() {
        let h = free(Chart::cartesian());
        let cfg = cart_config(4, 0.5, 48);
        let grid = cfg.grid(&Chart::cartesian()).unwrap();
        let (a, b) = (grid.point(20, 24), grid.point(26, 18));
        let kg = iterate_kernel(&cfg, &h, &[a, b]).unwrap();
        assert!(kg.values.iter().all(|&v| v >= 0.0));
        let kab = kg.value_at(1, a).unwrap();
        let kba = kg.value_at(0, b).unwrap();
        assert_relative_eq!(kab, kba, max_relative = 1e-8);
        assert!(kg.max_mass_loss() < 1e-6);
    }

    #[test]
    fn binary_round_trip() {
        let h = free(Chart::polar());
        let cfg = SliceConfig::new(
            2,
            0.05,
            Quadrature::Grid {
                n_r: 8,
                n_theta: 8,
                r_max: 3.0,
            },
        )
        .unwrap();
        let kg = iterate_kernel(&cfg, &h, &[Point2::polar(1.5, 0.0)]).unwrap();
        let mut buf = Vec::new();
        kg.write_binary(&mut buf).unwrap();
        assert_eq!(u64::from_le_bytes(buf[0..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        let back = KernelGrid::read_binary(&buf[..]).unwrap();
        assert_eq!(back.values, kg.values);
        assert_eq!(back.grid, kg.grid);
        assert!(KernelGrid::read_binary(&buf[..buf.len() - 8]).is_err());
        let mut csv_out = Vec::new();
        kg.write_csv(&mut csv_out, &[("scaled".into(), "false".into())]).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert!(text.starts_with("# scaled=false\nr,theta,r0,theta0,value\n"));
        assert_eq!(text.lines().count(), 2 + 64);
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = SliceConfig::new(0, 0.1, Quadrature::MonteCarlo { samples: 10, seed: 1 });
        assert!(matches!(bad, Err(Error::InvalidParameter { field: "N", .. })));
        let bad = SliceConfig::new(
            1,
            0.1,
            Quadrature::Grid {
                n_r: 4,
                n_theta: 16,
                r_max: 3.0,
            },
        );
        assert!(matches!(bad, Err(Error::InvalidParameter { field: "grid", .. })));
    }

    #[test]
    fn monte_carlo_matches_heat_kernel_on_the_plane() {
        let path = UnscaledPath::free(Chart::cartesian(), Units::default(), 4, 0.125);
        let (q, q0) = (Point2::new(0.4, 0.1), Point2::new(-0.2, 0.3));
        let est = monte_carlo_kernel(&path, q, q0, 2000, 7).unwrap();
        let exact = heat_kernel_cartesian(q, q0, 0.5, Units::default()).unwrap();
        // the bridge proposal is exact for the flat kernel, so every weight is equal
        assert_relative_eq!(est.value, exact, max_relative = 1e-10);
        assert!(est.std_error < 1e-10);
    }
}
