//! Acceptance gate. Each test prints one `ACCEPTANCE <k> PASS|FAIL` line with the
//! measured quantities and its runtime, then asserts.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use polarpath::generators::{Hamiltonian, PseudoHamiltonian};
use polarpath::kernel::{delta_limit_check, iterate_kernel, Quadrature, SliceConfig};
use polarpath::operators::{
    apply_canonical_polar, apply_h_rho_alpha, apply_laplace_beltrami, effective_potential_study, NESTED_MARGIN,
};
use polarpath::oracle::{
    bessel_series_kernel, free_polar_kernel, heat_kernel_cartesian, image_sum_kernel, CoverSheet, DEFAULT_L_MAX,
    DEFAULT_M_MAX,
};
use polarpath::probe::{standard_probes, KernelScheme, ModeProbe, RadialProfile};
use polarpath::scaling::{scaled_kernel_grid, ScaledKernelSpec};
use polarpath::schrod::{beta_moment, effective_generator, effective_generator_study, sum_odd, sum_odd_squares, SumVariant};
use polarpath::{quad, Chart, Grid2, MeasureDensity, Point, ScalingFunction, Units64, Wavefunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(k: u32, pass: bool, detail: String, elapsed: Duration, budget: Duration) -> bool {
    let ok = pass && elapsed <= budget;
    println!(
        "ACCEPTANCE {k} {}: {detail} [{:.2} s, budget {} s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

const IDENTITY_N_MAX: u64 = 10_000;
const BETA_REL_TOL: f64 = 1e-10;

#[test]
fn acceptance_1_exact_identities() {
    let t = Instant::now();
    let (mut odd, mut odd_sq, mut mismatches) = (0u128, 0u128, 0u64);
    for n in 1..=IDENTITY_N_MAX {
        let k = (2 * n - 1) as u128;
        odd += k;
        odd_sq += k * k;
        let m = n as u128;
        mismatches += (sum_odd(n) != odd || odd != m * m) as u64;
        mismatches += (sum_odd_squares(n).exact != odd_sq) as u64;
    }
    let mut worst = 0.0f64;
    for order in 0..=6u32 {
        for r in [0.5, 1.0, 2.0] {
            for big_n in [1u64, 10, 100] {
                let rate = 2.0 * r * big_n as f64;
                let q = quad::integrate_to_infinity(|b| b.powi(order as i32) * (-rate * b).exp(), 0.0, 1e-14, 0.0)
                    .unwrap();
                let m = beta_moment(order, r, big_n).unwrap();
                worst = worst.max((m - q).abs() / q);
            }
        }
    }
    let ok = report(
        1,
        mismatches == 0 && worst <= BETA_REL_TOL,
        format!("{mismatches} integer mismatches for N ≤ {IDENTITY_N_MAX}; β-moment max rel error {worst:.2e}"),
        t.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

const ANGULAR_TOL: f64 = 1e-6;

fn generator_grid() -> Grid2<f64> {
    Grid2::polar(Chart::polar(), 1.0, 3.0, 401, 256).unwrap()
}

fn generator_points(g: &Grid2<f64>) -> Vec<Point> {
    [100, 150, 200, 250, 300].iter().map(|&i| g.point(i, 29)).collect()
}

#[test]
fn acceptance_2_angular_channel_is_exact() {
    let t = Instant::now();
    let g = generator_grid();
    let u = Units64::default();
    let psi = ModeProbe::ring(2.0, 1.0, 1).sample(&g).unwrap();
    let mut worst = 0.0f64;
    for n in [1u64, 4, 16, 64] {
        let rep = effective_generator(n, &psi, &generator_points(&g), u, SumVariant::Exact).unwrap();
        for p in &rep.points {
            worst = worst.max((p.angular - p.angular_target).abs() / p.angular_target.abs());
        }
    }
    let ok = report(
        2,
        worst <= ANGULAR_TOL,
        format!("max rel deviation of the θθ channel from (1/r²)∂²ψ/∂θ²: {worst:.2e}"),
        t.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok);
}

const SCHRODINGER_RESIDUAL: f64 = 1e-3;
const ORDER_RANGE: (f64, f64) = (1.5, 2.5);

#[test]
fn acceptance_3_schrodinger_limit() {
    let t = Instant::now();
    let g = generator_grid();
    let psi = ModeProbe::ring(2.0, 1.0, 1).sample(&g).unwrap();
    let study =
        effective_generator_study(&[16, 32, 64, 128, 256], &psi, &generator_points(&g), Units64::default(), SumVariant::Exact)
            .unwrap();
    let last = study.reports.last().unwrap();
    let ok = report(
        3,
        last.residual_max <= SCHRODINGER_RESIDUAL && (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&study.fitted_order),
        format!(
            "residual at N = 256: {:.2e}; fitted order {:.3}; table {:?}",
            last.residual_max,
            study.fitted_order,
            study.table.iter().map(|r| r.residual).collect::<Vec<_>>()
        ),
        t.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

const CANONICAL_TOL: f64 = 1e-10;
const H_RHO_ALPHA_TOL: f64 = 1e-8;

#[test]
fn acceptance_4_operator_identities() {
    let t = Instant::now();
    let u = Units64::new(0.7, 1.3).unwrap();
    let g = Grid2::polar(Chart::polar(), 0.5, 4.0, 201, 64).unwrap();
    let psi = ModeProbe::ring(2.0, 1.0, 1).sample(&g).unwrap();
    let a = apply_canonical_polar(&psi, u).unwrap();
    let b = apply_laplace_beltrami(&psi, u).unwrap();
    let mut canon = 0.0f64;
    for k in 0..g.len() {
        let (i, j) = g.unindex(k);
        if g.is_interior(i, j, 2) {
            let r = g.point(i, j).q1;
            let want = u.hbar * u.hbar / (8.0 * u.mass * r * r) * psi.samples[k];
            canon = canon.max((a.samples[k] - b.samples[k] - want).norm());
        }
    }
    let u1 = Units64::default();
    let g2 = Grid2::polar(Chart::polar(), 0.5, 4.0, 1401, 256).unwrap();
    let psi2 = ModeProbe::ring(2.0, 0.7, 1).sample(&g2).unwrap();
    let h = apply_h_rho_alpha(&psi2, MeasureDensity::SqrtG, ScalingFunction::SqrtG, u1).unwrap();
    let lb = apply_laplace_beltrami(&psi2, u1).unwrap();
    let d = h.axpby(Complex64::new(1.0, 0.0), &lb, Complex64::new(-1.0, 0.0)).unwrap();
    let hra = d.max_abs_where(|i, j| g2.is_interior(i, j, NESTED_MARGIN));
    let ok = report(
        4,
        canon <= CANONICAL_TOL && hra <= H_RHO_ALPHA_TOL,
        format!("canonical − LB − ħ²/8mr²: {canon:.2e}; H_ρα(√g, √g) − LB: {hra:.2e}"),
        t.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

const KERNEL_REL_TOL: f64 = 0.02;
const KERNEL_R_MAX: f64 = 6.0;

fn cartesian_kernel_error(nodes: usize) -> f64 {
    let tau = 0.5;
    let u = Units64::default();
    let cfg = SliceConfig {
        n_slices: 8,
        eps: tau / 8.0,
        quadrature: Quadrature::Grid {
            n_r: nodes,
            n_theta: nodes,
            r_max: KERNEL_R_MAX,
        },
    };
    let h = PseudoHamiltonian::unscaled(Hamiltonian::free(Chart::cartesian(), u));
    let src = Point::new(0.0, 0.0);
    let kg = iterate_kernel(&cfg, &h, &[src]).unwrap();
    let quarter = KERNEL_R_MAX / 2.0;
    let mut worst = 0.0f64;
    for k in 0..kg.grid.len() {
        let q = kg.grid.point_at(k);
        if q.q1.abs() <= quarter && q.q2.abs() <= quarter {
            let e = heat_kernel_cartesian(q, src, tau, u).unwrap();
            worst = worst.max((kg.column(0)[k] - e).abs() / e);
        }
    }
    worst
}

#[test]
fn acceptance_5_euclidean_kernel_convergence() {
    let t = Instant::now();
    let coarse = cartesian_kernel_error(32);
    let fine = cartesian_kernel_error(64);
    let ok = report(
        5,
        fine <= KERNEL_REL_TOL && fine < coarse,
        format!("central-quarter max rel error: 32² {coarse:.3e}, 64² {fine:.3e}"),
        t.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

const COINCIDENCE_TOL: f64 = 1e-12;

#[test]
fn acceptance_6_unit_scaling_coincides() {
    let t = Instant::now();
    let u = Units64::default();
    let chart = Chart::polar();
    let mut worst = 0.0f64;
    for (n, n_r, n_theta) in [(1usize, 24usize, 24usize), (3, 32, 32), (4, 24, 48)] {
        let cfg = SliceConfig {
            n_slices: n,
            eps: 0.05,
            quadrature: Quadrature::Grid { n_r, n_theta, r_max: 4.0 },
        };
        let grid = cfg.grid(&chart).unwrap();
        let src = [grid.point(n_r / 2, 0), grid.point(n_r / 3, n_theta / 4)];
        let unscaled = iterate_kernel(&cfg, &PseudoHamiltonian::unscaled(Hamiltonian::free(chart, u)), &src).unwrap();
        let spec = ScaledKernelSpec::free(chart, u, ScalingFunction::unit());
        let scaled = scaled_kernel_grid(&cfg, &spec, &src, cfg.total_time()).unwrap();
        let peak = unscaled.values.iter().fold(0.0f64, |m, v| m.max(*v));
        for (a, b) in scaled.values.iter().zip(&unscaled.values) {
            worst = worst.max((a - b).abs() / peak);
        }
    }
    let ok = report(
        6,
        worst <= COINCIDENCE_TOL,
        format!("max |scaled(α=1) − unscaled| / peak: {worst:.2e}"),
        t.elapsed(),
        Duration::from_secs(60),
    );
    assert!(ok);
}

const C_TOL: f64 = 0.02 / 4.0;
const SIGNIFICANCE: f64 = 5.0;

#[test]
fn acceptance_7_scheme_discrimination() {
    let t = Instant::now();
    let u = Units64::default();
    let probes = standard_probes(2.0);
    let points: Vec<Point> = [1.5, 2.0, 2.5].iter().flat_map(|&r| [0.3, 1.1].map(|th| Point::polar(r, th))).collect();
    let mut pass = true;
    let mut lines = Vec::new();
    for eps in [1e-3, 5e-4] {
        let scaled =
            effective_potential_study(KernelScheme::Scaled { n_slices: 1 }, u, eps, &[1, 2, 3], &probes, &points).unwrap();
        let unscaled =
            effective_potential_study(KernelScheme::Unscaled { n_slices: 1 }, u, eps, &[1], &probes, &points).unwrap();
        pass &= scaled.c.abs() <= C_TOL && scaled.consistent_with_zero();
        pass &= unscaled.c.abs() > SIGNIFICANCE * unscaled.ci95_half_width;
        lines.push(format!(
            "ε = {eps:.0e}: scaled c∞ = {:.3e} ± {:.2e}, unscaled c = {:.7} ± {:.2e} (measured)",
            scaled.c, scaled.ci95_half_width, unscaled.c, unscaled.ci95_half_width
        ));
    }
    let ok = report(7, pass, lines.join("; "), t.elapsed(), Duration::from_secs(300));
    assert!(ok);
}

const DELTA_TOL: f64 = 1e-3;

#[test]
fn acceptance_8_delta_limit() {
    let t = Instant::now();
    let h = PseudoHamiltonian::unscaled(Hamiltonian::free(Chart::polar(), Units64::default()));
    let probes = [
        ModeProbe::ring(2.0, 2.0, 1),
        ModeProbe::new(RadialProfile::Power { k: 2 }, 0),
        ModeProbe::new(RadialProfile::Power { k: 1 }, 1),
    ];
    let q = Point::polar(2.0, 0.3);
    let rep = delta_limit_check(&h, q, &[1e-2, 5e-3, 2e-3, 1e-3], &probes).unwrap();
    let at = |eps: f64| rep.rows.iter().filter(|r| r.eps == eps).map(|r| r.rel_error).collect::<Vec<_>>();
    let worst = at(1e-3).into_iter().fold(0.0f64, f64::max);
    // the narrow ring exp(−(r−2)²) cos θ, for the record
    let narrow = delta_limit_check(&h, q, &[1e-3], &[ModeProbe::ring(2.0, 1.0, 1)]).unwrap().rows[0].rel_error;
    let ok = report(
        8,
        worst <= DELTA_TOL,
        format!(
            "errors at ε = 1e-3: {:?}; fitted rate {:.3}; exp(−(r−2)²)cos θ: {narrow:.3e}",
            at(1e-3),
            rep.fit.map(|f| f.exponent).unwrap_or(f64::NAN)
        ),
        t.elapsed(),
        Duration::from_secs(60),
    );
    assert!(ok);
}

const ORACLE_TOL: f64 = 1e-4;
const HEAT_TOL: f64 = 1e-4;
const BATTERY_SEED: u64 = 20_240_601;

fn battery() -> Vec<(Point, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(BATTERY_SEED);
    (0..20)
        .map(|_| {
            let mut p = || Point::polar(rng.random_range(0.5..3.0), rng.random_range(0.0..TAU));
            (p(), p())
        })
        .collect()
}

/// Relative residual of `ħ ∂τK = −Ĥ K` at `q`, with `Ĥ` the finite-difference
/// Laplace–Beltrami Hamiltonian on a small patch.
fn heat_residual(q0: Point, q: Point, tau: f64, u: Units64) -> f64 {
    let (h, n) = (0.01, 17usize);
    let r_lo = q.q1 - h * (n / 2) as f64;
    let g = Grid2::polar(Chart::polar(), r_lo, r_lo + h * (n - 1) as f64, n, 1024).unwrap();
    let k_at = |t: f64| {
        Wavefunction::from_real_fn(g.clone(), |p| free_polar_kernel(p.q1, p.q2, q0.q1, q0.q2, t, u).unwrap())
    };
    let hk = apply_laplace_beltrami(&k_at(tau), u).unwrap();
    let j = ((q.q2.rem_euclid(TAU)) / g.a2.step).round() as usize % g.a2.n;
    let i = n / 2;
    let p = g.point(i, j);
    let dt = 1e-4 * tau;
    let kp = free_polar_kernel(p.q1, p.q2, q0.q1, q0.q2, tau + dt, u).unwrap();
    let km = free_polar_kernel(p.q1, p.q2, q0.q1, q0.q2, tau - dt, u).unwrap();
    let d_tau = (kp - km) / (2.0 * dt);
    let lhs = u.hbar * d_tau;
    let rhs = -hk.at(i, j).re;
    (lhs - rhs).abs() / rhs.abs().max(lhs.abs())
}

#[test]
fn acceptance_9_oracle_coherence() {
    let t = Instant::now();
    let u = Units64::default();
    let tau = 0.5;
    let sheet = CoverSheet::new(u);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    let mut worst = 0.0f64;
    let mut heat = 0.0f64;
    for (q, q0) in battery() {
        let closed = free_polar_kernel(q.q1, q.q2, q0.q1, q0.q2, tau, u).unwrap();
        let series = bessel_series_kernel(q.q1, q.q2, q0.q1, q0.q2, tau, DEFAULT_L_MAX, u).unwrap().value;
        let images = image_sum_kernel(&sheet, q.q1, q.q2, q0.q1, q0.q2, tau, DEFAULT_M_MAX).unwrap().value;
        worst = worst.max(rel(closed, series)).max(rel(closed, images)).max(rel(series, images));
    }
    for (q, q0) in battery().into_iter().take(5) {
        // keep the stencil patch clear of the origin
        let q = Point::polar(q.q1.max(0.6), q.q2);
        heat = heat.max(heat_residual(q0, q, tau, u));
    }
    let ok = report(
        9,
        worst <= ORACLE_TOL && heat <= HEAT_TOL,
        format!("max pairwise rel disagreement {worst:.2e}; heat-equation residual {heat:.2e}"),
        t.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok);
}
