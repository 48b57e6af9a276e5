//! Adaptive Gauss–Kronrod quadrature on finite and semi-infinite intervals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive integral of `f` over `[a, b]` to absolute-or-relative tolerance.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    let mut stack = vec![(a, b, 0u32)];
    let mut total = 0.0;
    let mut err_total = 0.0;
    // first pass to get a scale for the relative tolerance
    let (whole, _) = gk15(&mut f, a, b);
    let scale = whole.abs();
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(&mut f, lo, hi);
        let width_share = (hi - lo) / (b - a);
        let allowed = (rel_tol * scale).max(abs_tol) * width_share.max(1e-3);
        if err <= allowed || depth >= 40 {
            if depth >= 40 && err > allowed {
                err_total += err;
            }
            total += val;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite integral".into()));
    }
    if err_total > (rel_tol * total.abs()).max(abs_tol) * 10.0 {
        return Err(Error::Numeric(format!(
            "quadrature did not converge (residual error {err_total:.3e})"
        )));
    }
    Ok(total)
}

/// Integral over `[a, ∞)` through the map `x = a + t/(1 − t)`.
pub fn integrate_to_infinity(mut f: impl FnMut(f64) -> f64, a: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let one_m = 1.0 - t;
            let x = a + t / one_m;
            let v = f(x) / (one_m * one_m);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        rel_tol,
        abs_tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_and_transcendental() {
        let v = integrate(|x| x.powi(6), 0.0, 2.0, 1e-13, 0.0).unwrap();
        assert_relative_eq!(v, 128.0 / 7.0, max_relative = 1e-13);
        let v = integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-13, 0.0).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-13);
    }

    #[test]
    fn semi_infinite_gaussian() {
        let v = integrate_to_infinity(|x| (-x * x).exp(), 0.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-11);
    }
}
