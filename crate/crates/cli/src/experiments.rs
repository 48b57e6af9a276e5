use std::f64::consts::TAU;
use std::io::Write;

use polarpath::generators::{Hamiltonian, PseudoHamiltonian};
use polarpath::geometry::DEFAULT_R_MIN;
use polarpath::kernel::{delta_limit_check, iterate_kernel, KernelGrid, Quadrature, SliceConfig};
use polarpath::oracle::{bessel_series_kernel, free_polar_kernel, heat_kernel_cartesian, image_sum_kernel, CoverSheet};
use polarpath::probe::{ModeProbe, RadialProfile};
use polarpath::scaling::{scaled_kernel_grid, ScaledKernelSpec};
use polarpath::schrod::{beta_moment, effective_generator_study, sum_odd, sum_odd_squares, write_convergence_csv, ConvergenceRow, SumVariant};
use polarpath::{quad, Chart, ChartKind, Grid2, Point2, ScalingFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{AlphaChoice, ExperimentConfig, ExperimentId};
use crate::CliError;

/// One file produced by a run, named `<experiment>_<timestamp><suffix>`.
pub struct Artifact {
    pub suffix: String,
    pub bytes: Vec<u8>,
}

pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub results: Value,
    /// Set when a measured quantity is outside its tolerance.
    pub breach: Option<String>,
}

pub fn run(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, CliError> {
    let meta = vec![
        ("experiment".to_string(), cfg.experiment.id().to_string()),
        ("config_hash".to_string(), hash.to_string()),
    ];
    let out = match cfg.experiment {
        ExperimentId::Identities => identities(cfg, &meta),
        ExperimentId::EffectiveGenerator => effective_generator(cfg, &meta),
        ExperimentId::KernelConvergence => kernel_convergence(cfg, &meta),
        ExperimentId::ScaledVsUnscaled => scaled_vs_unscaled(cfg, &meta),
        ExperimentId::OracleCrosscheck => oracle_crosscheck(cfg, &meta),
        ExperimentId::DeltaLimit => delta_limit(cfg, &meta),
    }?;
    if let Some(path) = first_non_finite(&out.results, String::new()) {
        return Err(CliError::Numeric(format!("non-finite value in results at `{path}`")));
    }
    Ok(out)
}

fn first_non_finite(v: &Value, path: String) -> Option<String> {
    match v {
        Value::Null => Some(path),
        Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| first_non_finite(x, format!("{path}[{i}]"))),
        Value::Object(m) => m
            .iter()
            .filter(|(k, _)| k.as_str() != "order_estimate" && k.as_str() != "fit")
            .find_map(|(k, x)| first_non_finite(x, if path.is_empty() { k.clone() } else { format!("{path}.{k}") })),
        _ => None,
    }
}

fn header(meta: &[(String, String)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").expect("write to Vec");
    }
    out
}

fn table(meta: &[(String, String)], columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(header(meta));
    w.write_record(columns).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn kernel_csv(kg: &KernelGrid, meta: &[(String, String)]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    kg.write_csv(&mut out, meta)?;
    Ok(out)
}

fn kernel_bin(kg: &KernelGrid) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    kg.write_binary(&mut out)?;
    Ok(out)
}

fn convergence_csv(rows: &[ConvergenceRow], meta: &[(String, String)]) -> Result<Vec<u8>, CliError> {
    let mut out = header(meta);
    write_convergence_csv(&mut out, rows)?;
    Ok(out)
}

fn to_json<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serialisable result")
}

fn artifact(suffix: &str, bytes: Vec<u8>) -> Artifact {
    Artifact {
        suffix: suffix.to_string(),
        bytes,
    }
}

fn polar_chart(cfg: &ExperimentConfig) -> Chart<f64> {
    Chart::polar().with_r_min(cfg.grid.r_min.max(DEFAULT_R_MIN))
}

fn identities(cfg: &ExperimentConfig, meta: &[(String, String)]) -> Result<Outcome, CliError> {
    let (mut odd, mut odd_sq) = (0u128, 0u128);
    let mut mismatches = 0u64;
    let mut rows = Vec::with_capacity(cfg.n_max as usize);
    for n in 1..=cfg.n_max {
        let k = (2 * n - 1) as u128;
        odd += k;
        odd_sq += k * k;
        let a = sum_odd(n);
        let b = sum_odd_squares(n).exact;
        let bad = a != odd || b != odd_sq;
        mismatches += bad as u64;
        rows.push(vec![n.to_string(), odd.to_string(), a.to_string(), odd_sq.to_string(), b.to_string(), (bad as u8).to_string()]);
    }
    let csv = table(
        meta,
        &["N", "sum_odd_direct", "sum_odd", "sum_odd_squares_direct", "sum_odd_squares", "mismatch"],
        rows,
    )?;
    let mut moments = Vec::new();
    let mut worst = 0.0f64;
    for order in 0..=6u32 {
        for &r in &[0.5, 1.0, 2.0] {
            for &n in &cfg.n {
                let closed = beta_moment(order, r, n)?;
                let rate = 2.0 * r * n as f64;
                let numeric = quad::integrate_to_infinity(|b| b.powi(order as i32) * (-rate * b).exp(), 0.0, 1e-13, 0.0)?;
                let rel = (closed - numeric).abs() / closed;
                worst = worst.max(rel);
                moments.push(json!({"n": order, "r": r, "N": n, "closed_form": closed, "quadrature": numeric, "rel_error": rel}));
            }
        }
    }
    let breach = if mismatches > 0 {
        Some(format!("{mismatches} odd-sum mismatches"))
    } else if worst > cfg.tolerance {
        Some(format!("β-moment relative error {worst:.3e} exceeds {:.1e}", cfg.tolerance))
    } else {
        None
    };
    Ok(Outcome {
        artifacts: vec![artifact(".csv", csv)],
        results: json!({"N_max": cfg.n_max, "mismatches": mismatches, "beta_moment_max_rel_error": worst, "beta_moments": moments}),
        breach,
    })
}

fn effective_generator(cfg: &ExperimentConfig, meta: &[(String, String)]) -> Result<Outcome, CliError> {
    let g = cfg.grid;
    let grid = Grid2::polar(polar_chart(cfg), g.r_min.max(DEFAULT_R_MIN), g.r_max, g.n_r, g.n_theta)?;
    let psi = ModeProbe::ring(2.0, 1.0, 1).sample(&grid)?;
    let j = (g.n_theta as f64 * 29.0 / 256.0).round() as usize;
    let mut points = Vec::new();
    for &r in &[1.5, 1.75, 2.0, 2.25, 2.5] {
        let (i, _) = grid.a1.locate(r);
        if i < 0 || i as usize >= grid.a1.n {
            return Err(CliError::Config(format!("invalid `grid`: radius {r} lies outside [r_min, r_max]")));
        }
        points.push(grid.point(i as usize, j));
    }
    let units = cfg.units();
    let study = effective_generator_study(&cfg.n, &psi, &points, units, SumVariant::Exact)?;
    let last = study.reports.last().expect("at least two reports");
    let breach = if !(1.5..=2.5).contains(&study.fitted_order) {
        Some(format!("fitted order {:.3} outside [1.5, 2.5]", study.fitted_order))
    } else if last.residual_max > cfg.tolerance {
        Some(format!("residual {:.3e} at N = {} exceeds {:.1e}", last.residual_max, last.n, cfg.tolerance))
    } else {
        None
    };
    Ok(Outcome {
        artifacts: vec![artifact(".csv", convergence_csv(&study.table, meta)?)],
        results: json!({
            "psi": "exp(-(r-2)^2) cos(theta)",
            "fitted_order": study.fitted_order,
            "table": to_json(&study.table),
            "reports": to_json(&study.reports),
        }),
        breach,
    })
}

/// Largest relative error of `kg` against `exact` on the central part of the grid.
fn central_error(kg: &KernelGrid, exact: impl Fn(Point2<f64>) -> polarpath::Result<f64>, central: impl Fn(Point2<f64>) -> bool) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for k in 0..kg.grid.len() {
        let q = kg.grid.point_at(k);
        if central(q) {
            let e = exact(q)?;
            if !(e > 0.0) || !e.is_finite() {
                return Err(CliError::Numeric(format!("exact kernel {e:e} at ({}, {}) is not a usable reference", q.q1, q.q2)));
            }
            let rel = (kg.column(0)[k] - e).abs() / e;
            if !rel.is_finite() {
                return Err(CliError::Numeric(format!("non-finite kernel error at ({}, {})", q.q1, q.q2)));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn kernel_convergence(cfg: &ExperimentConfig, meta: &[(String, String)]) -> Result<Outcome, CliError> {
    let n = cfg.n[0] as usize;
    let eps = cfg.tau / n as f64;
    let units = cfg.units();
    let g = cfg.grid;
    let (chart, src) = match cfg.chart {
        ChartKind::Cartesian2d => (Chart::cartesian(), Point2::new(0.0, 0.0)),
        ChartKind::Polar2d => (polar_chart(cfg), Point2::polar(0.5 * g.r_max, 0.0)),
    };
    let h = PseudoHamiltonian::unscaled(Hamiltonian::free(chart, units));
    let half = g.r_max / 2.0;
    let exact = |q: Point2<f64>| match chart.kind {
        ChartKind::Cartesian2d => heat_kernel_cartesian(q, src, cfg.tau, units),
        ChartKind::Polar2d => free_polar_kernel(q.q1, q.q2, src.q1, src.q2, cfg.tau, units),
    };
    let central = |q: Point2<f64>| match chart.kind {
        ChartKind::Cartesian2d => q.q1.abs() <= half && q.q2.abs() <= half,
        ChartKind::Polar2d => (q.q1 - src.q1).abs() <= half / 2.0 && (q.q2 - src.q2).cos() >= 0.0,
    };
    let levels = [(g.n_r / 2, g.n_theta / 2), (g.n_r, g.n_theta)];
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut finest = None;
    let mut prev: Option<f64> = None;
    for &(n_r, n_theta) in &levels {
        let sc = SliceConfig {
            n_slices: n,
            eps,
            quadrature: Quadrature::Grid { n_r, n_theta, r_max: g.r_max },
        };
        let kg = iterate_kernel(&sc, &h, &[src])?;
        let err = central_error(&kg, exact, central)?;
        errors.push(json!({"n_r": n_r, "n_theta": n_theta, "max_rel_error": err, "mass_loss": kg.max_mass_loss()}));
        rows.push(ConvergenceRow {
            n: n_r as u64,
            residual: err,
            order_estimate: prev.map(|p| (p / err).ln() / 2f64.ln()),
        });
        prev = Some(err);
        finest = Some(kg);
    }
    let kg = finest.expect("two levels");
    let (coarse, fine) = (rows[0].residual, rows[1].residual);
    let breach = if fine > cfg.tolerance {
        Some(format!("max relative error {fine:.3e} exceeds {:.1e}", cfg.tolerance))
    } else if fine >= coarse {
        Some(format!("refining the grid did not reduce the error ({coarse:.3e} → {fine:.3e})"))
    } else {
        None
    };
    Ok(Outcome {
        artifacts: vec![
            artifact(".csv", kernel_csv(&kg, meta)?),
            artifact(".bin", kernel_bin(&kg)?),
            artifact(".convergence.csv", convergence_csv(&rows, meta)?),
        ],
        results: json!({
            "N": n,
            "eps": eps,
            "tau": cfg.tau,
            "source": [src.q1, src.q2],
            "levels": errors,
        }),
        breach,
    })
}

fn scaled_vs_unscaled(cfg: &ExperimentConfig, meta: &[(String, String)]) -> Result<Outcome, CliError> {
    let n = cfg.n[0] as usize;
    let units = cfg.units();
    let chart = polar_chart(cfg);
    let g = cfg.grid;
    let sc = SliceConfig {
        n_slices: n,
        eps: cfg.tau / n as f64,
        quadrature: Quadrature::Grid {
            n_r: g.n_r,
            n_theta: g.n_theta,
            r_max: g.r_max,
        },
    };
    let grid = sc.grid(&chart)?;
    let (i, _) = grid.a1.locate(0.5 * g.r_max);
    let src = grid.point(i.max(0) as usize, 0);
    let unscaled = iterate_kernel(&sc, &PseudoHamiltonian::unscaled(Hamiltonian::free(chart, units)), &[src])?;
    let alpha = match cfg.alpha {
        AlphaChoice::Unit => ScalingFunction::unit(),
        AlphaChoice::SqrtG => ScalingFunction::SqrtG,
    };
    let spec = ScaledKernelSpec::free(chart, units, alpha);
    let scaled = scaled_kernel_grid(&sc, &spec, &[src], cfg.tau)?;
    let peak = unscaled.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for (a, b) in scaled.values.iter().zip(&unscaled.values) {
        let d = (a - b).abs();
        max_abs = max_abs.max(d);
        if b.abs() > 1e-8 * peak {
            max_rel = max_rel.max(d / b.abs());
        }
    }
    let breach = (cfg.alpha == AlphaChoice::Unit && max_abs > cfg.tolerance)
        .then(|| format!("α = 1 kernels differ by {max_abs:.3e} > {:.1e}", cfg.tolerance));
    Ok(Outcome {
        artifacts: vec![
            artifact(".csv", kernel_csv(&scaled, meta)?),
            artifact(".unscaled.csv", kernel_csv(&unscaled, meta)?),
            artifact(".bin", kernel_bin(&scaled)?),
            artifact(".unscaled.bin", kernel_bin(&unscaled)?),
        ],
        results: json!({
            "alpha": cfg.alpha,
            "N": n,
            "tau": cfg.tau,
            "source": [src.q1, src.q2],
            "max_abs_diff": max_abs,
            "max_rel_diff": max_rel,
            "mass_loss_scaled": scaled.max_mass_loss(),
            "mass_loss_unscaled": unscaled.max_mass_loss(),
        }),
        breach,
    })
}

/// Seeded pairs of polar points with radii in `[0.5, 3]`.
pub fn point_pairs(seed: u64, count: usize) -> Vec<(Point2<f64>, Point2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut p = || Point2::polar(rng.random_range(0.5..3.0), rng.random_range(0.0..TAU));
            (p(), p())
        })
        .collect()
}

fn oracle_crosscheck(cfg: &ExperimentConfig, meta: &[(String, String)]) -> Result<Outcome, CliError> {
    let units = cfg.units();
    let sheet = CoverSheet::new(units);
    let mut rows = Vec::new();
    let mut worst = [0.0f64; 3];
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    for (q, q0) in point_pairs(cfg.seed, cfg.pairs) {
        let closed = free_polar_kernel(q.q1, q.q2, q0.q1, q0.q2, cfg.tau, units)?;
        let series = bessel_series_kernel(q.q1, q.q2, q0.q1, q0.q2, cfg.tau, cfg.l_max, units)?.value;
        let images = image_sum_kernel(&sheet, q.q1, q.q2, q0.q1, q0.q2, cfg.tau, cfg.m_max)?.value;
        let d = [rel(closed, series), rel(closed, images), rel(series, images)];
        for (w, x) in worst.iter_mut().zip(d) {
            *w = w.max(x);
        }
        rows.push(vec![q.q1, q.q2, q0.q1, q0.q2, closed, series, images].iter().map(|v| v.to_string()).collect());
    }
    let csv = table(meta, &["r", "theta", "r0", "theta0", "closed_form", "bessel_series", "image_sum"], rows)?;
    let max = worst.iter().fold(0.0f64, |m, x| m.max(*x));
    let breach = (max > cfg.tolerance).then(|| format!("representations disagree by {max:.3e} > {:.1e}", cfg.tolerance));
    Ok(Outcome {
        artifacts: vec![artifact(".csv", csv)],
        results: json!({
            "tau": cfg.tau,
            "l_max": cfg.l_max,
            "m_max": cfg.m_max,
            "max_rel_closed_vs_bessel": worst[0],
            "max_rel_closed_vs_images": worst[1],
            "max_rel_bessel_vs_images": worst[2],
        }),
        breach,
    })
}

/// Three smooth probes for the delta limit.
pub fn delta_probes() -> [ModeProbe; 3] {
    [
        ModeProbe::ring(2.0, 2.0, 1),
        ModeProbe::new(RadialProfile::Power { k: 2 }, 0),
        ModeProbe::new(RadialProfile::Power { k: 1 }, 1),
    ]
}

fn delta_limit(cfg: &ExperimentConfig, meta: &[(String, String)]) -> Result<Outcome, CliError> {
    if cfg.chart != ChartKind::Polar2d {
        return Err(CliError::Config("invalid `chart`: delta_limit runs on polar2d".into()));
    }
    let h = PseudoHamiltonian::unscaled(Hamiltonian::free(polar_chart(cfg), cfg.units()));
    let q = Point2::polar(2.0, 0.3);
    let probes = delta_probes();
    let report = delta_limit_check(&h, q, &cfg.eps, &probes)?;
    let rows = report.rows.iter().map(|r| {
        vec![r.eps.to_string(), r.probe.to_string(), r.value.to_string(), r.expected.to_string(), r.rel_error.to_string()]
    });
    let csv = table(meta, &["eps", "probe", "value", "expected", "rel_error"], rows)?;
    let last = *cfg.eps.last().expect("non-empty eps list");
    let worst = report
        .rows
        .iter()
        .filter(|r| r.eps == last)
        .fold(0.0f64, |m, r| m.max(r.rel_error));
    let breach = (worst > cfg.tolerance).then(|| format!("error {worst:.3e} at ε = {last} exceeds {:.1e}", cfg.tolerance));
    let fit = match report.fit {
        Some(f) => to_json(&f),
        None => Value::Null,
    };
    Ok(Outcome {
        artifacts: vec![artifact(".csv", csv)],
        results: json!({
            "point": [q.q1, q.q2],
            "probes": to_json(&probes),
            "rows": to_json(&report.rows),
            "max_rel_error_at_smallest_eps": worst,
            "fit": fit,
        }),
        breach,
    })
}
