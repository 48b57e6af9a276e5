//! The scaled path integral `𝒦[H, ρ, α]`.
//!
//! Integrating the pseudo-energy over the real line gives a δ-function in the
//! pseudo-time, and the pseudo-time integral then fixes the slice step path by
//! path: with `F = Σ_j (α(q_{j+1}) + α(q_j))` the step becomes `2t/F` and the
//! path picks up a factor `2N/F`. For `α = r` on the polar chart
//! `F = r0 + 2(r_1 + … + r_{N−1}) + r`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::generators::{reduced_slice_action, Hamiltonian, PseudoHamiltonian};
use crate::geometry::{Chart, MeasureDensity, Point2, ScalingFunction, Units};
use crate::grid::{Axis, Grid2, Wavefunction};
use crate::kernel::{
    iterate_kernel, monte_carlo_kernel, short_time_kernel, short_time_kernel_sheet, KernelGrid, McEstimate,
    PathIntegrand, Quadrature, SliceConfig,
};
use crate::operators::{h_rho_alpha_at, NESTED_MARGIN};
use crate::probe::{KernelScheme, ModeProbe};
use crate::scalar::Real;

/// Boundary and interior radii of one path with the resulting `F` and half-step `t/F`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedSlicing<T> {
    /// `r0, r_1, …, r_{N−1}, r`.
    pub radii: Vec<T>,
    pub f: T,
    pub half_step: T,
}

/// Computes `F = r0 + 2(r_1 + … + r_{N−1}) + r` and `t/F` for `radii = [r0, …, r]`.
pub fn reduce_pseudo_energy<T: Real>(radii: &[T], t: T) -> Result<ReducedSlicing<T>> {
    if radii.len() < 2 {
        return Err(invalid("radii", "need at least the two boundary radii"));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > T::zero())) {
        return Err(Error::Domain(format!("radius {r} must be > 0")));
    }
    if !(t > T::zero()) {
        return Err(invalid("t", "must be positive"));
    }
    let f = scaling_sum(radii);
    Ok(ReducedSlicing {
        radii: radii.to_vec(),
        f,
        half_step: t / f,
    })
}

/// `Σ_j (a_{j+1} + a_j)` over consecutive pairs.
pub fn scaling_sum<T: Real>(alphas: &[T]) -> T {
    alphas.windows(2).fold(T::zero(), |acc, w| acc + (w[1] + w[0]))
}

impl<T: Real> ReducedSlicing<T> {
    pub fn slices(&self) -> usize {
        self.radii.len() - 1
    }

    /// Overall path factor `2N/F`.
    pub fn path_factor(&self) -> T {
        T::lit(2.0) * T::from_usize_lossy(self.slices()) / self.f
    }

    /// Reduced action of slice `j` with momenta `(P, p)` and angles `θ_{j+1}, θ_j`.
    pub fn slice_action(&self, j: usize, theta_next: T, theta: T, big_p: T, small_p: T, units: Units<T>) -> Result<T> {
        if j >= self.slices() {
            return Err(invalid("j", format!("slice index {j} out of range")));
        }
        reduced_slice_action(
            Point2::polar(self.radii[j + 1], theta_next),
            Point2::polar(self.radii[j], theta),
            big_p,
            small_p,
            self.half_step,
            units,
        )
    }
}

/// Ingredients of `𝒦[H, ρ, α]`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledKernelSpec {
    pub h: Hamiltonian<f64>,
    pub rho: MeasureDensity<f64>,
    pub alpha: ScalingFunction<f64>,
}

impl ScaledKernelSpec {
    /// Free particle with `ρ = √g` and the given `α`.
    pub fn free(chart: Chart<f64>, units: Units<f64>, alpha: ScalingFunction<f64>) -> Self {
        Self {
            h: Hamiltonian::free(chart, units),
            rho: MeasureDensity::SqrtG,
            alpha,
        }
    }

    /// `√(α(q) α(q0))`.
    pub fn prefactor(&self, q: Point2<f64>, q0: Point2<f64>) -> Result<f64> {
        let c = &self.h.chart;
        Ok((self.alpha.eval(c, q)? * self.alpha.eval(c, q0)?).sqrt())
    }

    /// Pseudo-Hamiltonian at zero pseudo-energy, whose slice Gaussians the reduced
    /// kernel uses.
    pub fn pseudo(&self) -> Result<PseudoHamiltonian<f64>> {
        if self.rho != MeasureDensity::SqrtG {
            return Err(Error::Unsupported("slice prefactors are built for ρ = √g".into()));
        }
        PseudoHamiltonian::new(self.h, self.alpha, 0.0)
    }
}

/// Reduced scaled integrand over interior points:
/// `(2N/F) √(α(q) α(q0)) ∏_j K_{2t/F}(q_{j+1}; q_j) ∏_k ρ(q_k)`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledPath {
    pub spec: ScaledKernelSpec,
    pub n_slices: usize,
    pub t: f64,
}

impl PathIntegrand for ScaledPath {
    fn chart(&self) -> Chart<f64> {
        self.spec.h.chart
    }

    fn units(&self) -> Units<f64> {
        self.spec.h.units
    }

    fn slices(&self) -> usize {
        self.n_slices
    }

    fn time(&self) -> f64 {
        self.t
    }

    fn eval(&self, path: &[Point2<f64>]) -> Result<f64> {
        let chart = self.chart();
        let h = self.spec.pseudo()?;
        let alphas: Vec<f64> = path.iter().map(|&q| self.spec.alpha.eval(&chart, q)).collect::<Result<_>>()?;
        let f = scaling_sum(&alphas);
        let n = path.len() - 1;
        let eps = 2.0 * self.t / f;
        let mut w = 2.0 * n as f64 / f * (alphas[n] * alphas[0]).sqrt();
        for pair in path.windows(2) {
            w *= short_time_kernel_sheet(pair[1], pair[0], eps, &h)?;
        }
        for &q in &path[1..n] {
            w *= chart.density(q)?;
        }
        Ok(w)
    }
}

/// Largest slice count evaluated on a grid when `α` varies.
pub const MAX_GRID_SLICES: usize = 2;

/// Scaled kernel columns `𝒦(·; q0)` on the grid of a grid quadrature.
///
/// A constant `α` makes `F` path-independent, and the kernel is the unscaled
/// composition with step `2t/F` (for `α ≡ 1` the very same call as the unscaled
/// kernel). A varying `α` couples all slices through `F`, so only `N ≤ 2` is
/// done on a grid.
pub fn scaled_kernel_grid(
    config: &SliceConfig,
    spec: &ScaledKernelSpec,
    sources: &[Point2<f64>],
    t: f64,
) -> Result<KernelGrid> {
    let chart = spec.h.chart;
    config.validate(&chart)?;
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    let h = spec.pseudo()?;
    let n = config.n_slices;
    if let ScalingFunction::Constant(c) = spec.alpha {
        let cfg = SliceConfig {
            eps: t / (n as f64 * c),
            ..*config
        };
        let mut kg = iterate_kernel(&cfg, &h, sources)?;
        kg.time = t;
        return Ok(kg);
    }
    if n > MAX_GRID_SLICES {
        return Err(Error::Unsupported(format!(
            "grid evaluation of a varying scaling function needs N ≤ {MAX_GRID_SLICES}; use Monte Carlo"
        )));
    }
    let grid = config.grid(&chart)?;
    let weights = grid.measure_weights(|q| chart.density(q))?;
    let alpha_nodes: Vec<f64> = (0..grid.len())
        .map(|k| spec.alpha.eval(&chart, grid.point_at(k)))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(grid.len() * sources.len());
    for &q0 in sources {
        let a0 = spec.alpha.eval(&chart, q0)?;
        let col = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let q = grid.point_at(k);
                let a = alpha_nodes[k];
                if n == 1 {
                    let f = a + a0;
                    return Ok(2.0 / f * (a * a0).sqrt() * short_time_kernel(&chart, q, q0, 2.0 * t / f, &h)?);
                }
                let mut acc = 0.0;
                for m in 0..grid.len() {
                    let q1 = grid.point_at(m);
                    let f = a + 2.0 * alpha_nodes[m] + a0;
                    let eps = 2.0 * t / f;
                    acc += 4.0 / f
                        * short_time_kernel(&chart, q, q1, eps, &h)?
                        * short_time_kernel(&chart, q1, q0, eps, &h)?
                        * weights[m];
                }
                Ok(acc * (a * a0).sqrt())
            })
            .collect::<Result<Vec<f64>>>()?;
        values.extend(col);
    }
    let mut kg = KernelGrid {
        grid,
        time: t,
        n_slices: n,
        eps: t / n as f64,
        sources: sources.to_vec(),
        values,
        weights,
        mass_loss: vec![],
    };
    kg.mass_loss = (0..sources.len())
        .map(|s| 1.0 - kg.column(s).iter().zip(&kg.weights).map(|(v, w)| v * w).sum::<f64>())
        .collect();
    Ok(kg)
}

/// `𝒦(q, t; q0)` by the quadrature the config selects.
pub fn scaled_kernel_euclidean(
    config: &SliceConfig,
    spec: &ScaledKernelSpec,
    q: Point2<f64>,
    q0: Point2<f64>,
    t: f64,
) -> Result<McEstimate> {
    match config.quadrature {
        Quadrature::Grid { .. } => {
            let kg = scaled_kernel_grid(config, spec, &[q0], t)?;
            Ok(McEstimate {
                value: kg.value_at(0, q)?,
                std_error: 0.0,
                rejected: 0.0,
            })
        }
        Quadrature::MonteCarlo { samples, seed } => {
            config.validate(&spec.h.chart)?;
            let path = ScaledPath {
                spec: *spec,
                n_slices: config.n_slices,
                t,
            };
            monte_carlo_kernel(&path, q, q0, samples, seed)
        }
    }
}

/// One comparison of `∂ψ/∂τ` with `−Ĥ_{ρ,α}ψ/ħ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub tau: f64,
    pub q1: f64,
    pub q2: f64,
    pub d_tau: f64,
    pub h_psi: f64,
    /// `|∂ψ/∂τ + Ĥψ/ħ| / |Ĥψ/ħ|`.
    pub rel_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub max_residual: f64,
}

/// Grid step of the local stencil grids in [`h_rho_alpha_consistency`].
pub const CONSISTENCY_STEP: f64 = 0.02;
/// Angular nodes of the local polar grids.
pub const CONSISTENCY_ANGLES: usize = 128;

/// Checks the Euclidean evolution equation `∂ψ/∂τ = −Ĥ_{ρ,α}ψ/ħ` for a probe
/// propagated by `scheme`.
///
/// `ψ(τ)` is sampled on a small stencil grid around each point, `Ĥ_{ρ,α}` is applied
/// by nested differences, and `∂ψ/∂τ` is a centred difference with step `τ/4`.
pub fn h_rho_alpha_consistency(
    scheme: KernelScheme,
    units: Units<f64>,
    rho: MeasureDensity<f64>,
    alpha: ScalingFunction<f64>,
    probe: &ModeProbe,
    points: &[Point2<f64>],
    taus: &[f64],
) -> Result<ConsistencyReport> {
    let chart = scheme.chart();
    let half = NESTED_MARGIN;
    let n = 2 * half + 1;
    let mut rows = Vec::new();
    for &tau in taus {
        if !(tau > 0.0) {
            return Err(invalid("tau", "must be positive"));
        }
        let now = scheme.action(units, tau)?;
        let later = scheme.action(units, 1.25 * tau)?;
        let earlier = scheme.action(units, 0.75 * tau)?;
        for &q in points {
            let h = CONSISTENCY_STEP;
            let (grid, centre) = if chart.is_polar() {
                let a2: Axis<f64> = Axis::angular(CONSISTENCY_ANGLES)?;
                let j = (q.q2 / a2.step).round().rem_euclid(a2.n as f64) as usize;
                let a1 = Axis::closed(q.q1 - half as f64 * h, q.q1 + half as f64 * h, n)?;
                (Grid2 { chart, a1, a2 }, (half, j))
            } else {
                let a1 = Axis::closed(q.q1 - half as f64 * h, q.q1 + half as f64 * h, n)?;
                let a2 = Axis::closed(q.q2 - half as f64 * h, q.q2 + half as f64 * h, n)?;
                (Grid2 { chart, a1, a2 }, (half, half))
            };
            let samples: Vec<f64> = if chart.is_polar() {
                // rotation invariance: ψ(τ)(r, θ) = Φ(r) cos(lθ)
                let radial: Vec<f64> = (0..n)
                    .map(|i| now.act(probe, Point2::polar(grid.a1.node(i), 0.0)))
                    .collect::<Result<_>>()?;
                (0..grid.len())
                    .map(|k| {
                        let (i, j) = grid.unindex(k);
                        radial[i] * (probe.l as f64 * grid.a2.node(j)).cos()
                    })
                    .collect()
            } else {
                (0..grid.len())
                    .into_par_iter()
                    .map(|k| now.act(probe, grid.point_at(k)))
                    .collect::<Result<_>>()?
            };
            let psi = Wavefunction::from_fn(grid.clone(), |p| {
                let (i, j) = grid.node_of(p).expect("grid node");
                samples[grid.index(i, j)].into()
            });
            let at = grid.point(centre.0, centre.1);
            let h_psi = h_rho_alpha_at(&psi, centre.0, centre.1, rho, alpha, units)?.re;
            let d_tau = (later.act(probe, at)? - earlier.act(probe, at)?) / (0.5 * tau);
            let target = -h_psi / units.hbar;
            rows.push(ConsistencyRow {
                tau,
                q1: at.q1,
                q2: at.q2,
                d_tau,
                h_psi,
                rel_residual: (d_tau - target).abs() / target.abs(),
            });
        }
    }
    let max_residual = rows.iter().fold(0.0f64, |m, r| m.max(r.rel_residual));
    Ok(ConsistencyReport { rows, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{image_sum_kernel, CoverSheet};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reduction_examples() {
        let r = 1.7;
        let all = reduce_pseudo_energy(&[r; 6], 0.3).unwrap();
        assert_relative_eq!(all.f, 2.0 * 5.0 * r, max_relative = 1e-15);
        assert_relative_eq!(all.half_step, 0.3 / (10.0 * r), max_relative = 1e-15);
        assert_relative_eq!(all.path_factor(), 1.0 / r, max_relative = 1e-15);
        let one = reduce_pseudo_energy(&[1.2, 0.8], 1.0).unwrap();
        assert_eq!(one.f, 2.0);
        let three = reduce_pseudo_energy(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(three.f, 8.0);
        assert!(matches!(reduce_pseudo_energy(&[1.0, -2.0, 3.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn reduced_slice_action_uses_the_half_step() {
        let s = reduce_pseudo_energy(&[1.0, 2.0, 3.0], 0.8).unwrap();
        let u = Units::default();
        let a = s.slice_action(1, 0.4, 0.1, 0.5, -0.3, u).unwrap();
        let want = 0.5 * 1.0 + (-0.3) * 0.3 - 0.1 * (0.25 * 5.0 / 2.0 + 0.09 * (1.0 / 3.0 + 0.5) / 2.0);
        assert_relative_eq!(a, want, max_relative = 1e-14);
        assert!(s.slice_action(2, 0.0, 0.0, 0.0, 0.0, u).is_err());
    }

    fn polar_cfg(n: usize) -> SliceConfig {
        SliceConfig::new(
            n,
            0.1,
            Quadrature::Grid {
                n_r: 24,
                n_theta: 24,
                r_max: 4.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn unit_alpha_is_the_unscaled_kernel() {
        let u = Units::default();
        let spec = ScaledKernelSpec::free(Chart::polar(), u, ScalingFunction::unit());
        let cfg = polar_cfg(3);
        let src = cfg.grid(&Chart::polar()).unwrap().point(10, 3);
        let a = scaled_kernel_grid(&cfg, &spec, &[src], cfg.total_time()).unwrap();
        let h = PseudoHamiltonian::unscaled(Hamiltonian::free(Chart::polar(), u));
        let b = iterate_kernel(&cfg, &h, &[src]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * y.abs(), "{x} vs {y}");
        }
    }

    #[test]
    fn grid_and_path_integrand_agree_for_two_slices() {
        let u = Units::default();
        let spec = ScaledKernelSpec::free(Chart::polar(), u, ScalingFunction::SqrtG);
        let cfg = polar_cfg(2);
        let grid = cfg.grid(&Chart::polar()).unwrap();
        let (q, q0) = (grid.point(12, 2), grid.point(11, 0));
        let kg = scaled_kernel_grid(&cfg, &spec, &[q0], 0.4).unwrap();
        let w = grid.measure_weights(|p| Chart::polar().density(p)).unwrap();
        let path = ScaledPath {
            spec,
            n_slices: 2,
            t: 0.4,
        };
        // the path integrand over the same nodes, angles taken on the principal sheet
        let mut direct = 0.0;
        for m in 0..grid.len() {
            let q1 = grid.point_at(m);
            for w1 in -2..=2 {
                for w2 in -2..=2 {
                    let p1 = Point2::polar(q1.q1, q1.q2 + std::f64::consts::TAU * w1 as f64);
                    let p2 = Point2::polar(q.q1, q.q2 + std::f64::consts::TAU * w2 as f64);
                    direct += path.eval(&[q0, p1, p2]).unwrap() * w[m] / q1.q1;
                }
            }
        }
        assert_relative_eq!(kg.value_at(0, q).unwrap(), direct, max_relative = 1e-8);
    }

    #[test]
    fn monte_carlo_scaled_kernel_tracks_the_exact_kernel() {
        let u = Units::default();
        let spec = ScaledKernelSpec::free(Chart::polar(), u, ScalingFunction::SqrtG);
        let cfg = SliceConfig::new(8, 0.5 / 8.0, Quadrature::MonteCarlo { samples: 20_000, seed: 11 }).unwrap();
        let q = Point2::polar(2.0, 0.0);
        let est = scaled_kernel_euclidean(&cfg, &spec, q, q, 0.5).unwrap();
        let exact = image_sum_kernel(&CoverSheet::new(u), 2.0, 0.0, 2.0, 0.0, 0.5, 8).unwrap().value;
        assert!((est.value - exact).abs() <= 0.03 * exact, "{} vs {exact} ± {}", est.value, est.std_error);
    }

    #[test]
    fn varying_alpha_grid_is_limited() {
        let spec = ScaledKernelSpec::free(Chart::polar(), Units::default(), ScalingFunction::SqrtG);
        let r = scaled_kernel_grid(&polar_cfg(3), &spec, &[Point2::polar(1.0, 0.0)], 0.2);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn scaled_operator_consistency() {
        let u = Units::default();
        let probe = ModeProbe::ring(2.0, 1.0, 1);
        let pts = [Point2::polar(2.0, 0.0), Point2::polar(1.8, 0.0)];
        let rep = h_rho_alpha_consistency(
            KernelScheme::Scaled { n_slices: 3 },
            u,
            MeasureDensity::SqrtG,
            ScalingFunction::SqrtG,
            &probe,
            &pts,
            &[1e-3, 1e-2],
        )
        .unwrap();
        assert!(rep.max_residual <= 0.02, "{rep:?}");
        let flat = h_rho_alpha_consistency(
            KernelScheme::Cartesian,
            u,
            MeasureDensity::Constant(1.0),
            ScalingFunction::unit(),
            &probe,
            &[Point2::new(1.5, 1.0)],
            &[1e-3],
        )
        .unwrap();
        assert!(flat.max_residual <= 1e-3, "{flat:?}");
    }

    proptest! {
        #[test]
        fn f_is_reproducible_and_equal_radii_give_2nr(r in 0.1f64..5.0, n in 1usize..30, t in 0.01f64..2.0) {
            let s = reduce_pseudo_energy(&vec![r; n + 1], t).unwrap();
            let s2 = reduce_pseudo_energy(&vec![r; n + 1], t).unwrap();
            prop_assert_eq!(s.f.to_bits(), s2.f.to_bits());
            prop_assert!((s.f - 2.0 * n as f64 * r).abs() <= 1e-12 * s.f);
        }

        #[test]
        fn scaled_kernel_is_periodic(th in 0.0f64..6.0, th0 in 0.0f64..6.0) {
            let spec = ScaledKernelSpec::free(Chart::polar(), Units::default(), ScalingFunction::SqrtG);
            let cfg = SliceConfig::new(1, 0.2, Quadrature::MonteCarlo { samples: 2, seed: 1 }).unwrap();
            let tau = std::f64::consts::TAU;
            let a = scaled_kernel_euclidean(&cfg, &spec, Point2::polar(1.5, th), Point2::polar(1.2, th0), 0.2).unwrap();
            let b = scaled_kernel_euclidean(&cfg, &spec, Point2::polar(1.5, th + tau), Point2::polar(1.2, th0 + tau), 0.2).unwrap();
            prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1e-300));
        }
    }
}
