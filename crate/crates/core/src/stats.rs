//! Small regression helpers: power-law order fits and linear least squares with
//! confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};

/// Result of fitting `log y = log C + p log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub prefactor: f64,
}

/// Least-squares power law through positive `(x, y)` pairs.
pub fn power_law_fit(xs: &[f64], ys: &[f64]) -> Result<PowerLaw> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("fit", "need at least two (x, y) pairs of equal length"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Numeric("power-law fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::IllConditioned { condition: f64::INFINITY });
    }
    let exponent = sxy / sxx;
    Ok(PowerLaw {
        exponent,
        prefactor: (my - exponent * mx).exp(),
    })
}

/// Ordinary least squares `y ≈ X β` with standard errors and two-sided 95% intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Half-width of the two-sided 95% confidence interval of each coefficient.
    pub ci95_half_width: Vec<f64>,
    pub residual_rms: f64,
    /// Ratio of extreme singular values of the design matrix.
    pub condition_number: f64,
    pub dof: usize,
}

impl LinearFit {
    /// True when the 95% interval of coefficient `k` contains zero.
    pub fn covers_zero(&self, k: usize) -> bool {
        self.coefficients[k].abs() <= self.ci95_half_width[k]
    }
}

/// Condition number above which a design matrix is rejected.
pub const MAX_CONDITION: f64 = 1e10;

pub fn least_squares(rows: &[Vec<f64>], ys: &[f64]) -> Result<LinearFit> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || n != ys.len() || n <= p {
        return Err(invalid(
            "fit",
            format!("need more observations ({n}) than parameters ({p})"),
        ));
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(ys);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
    let resid = &y - &x * &beta;
    let dof = n - p;
    let s2 = resid.norm_squared() / dof as f64;
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or(Error::IllConditioned { condition })?;
    let t = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::Numeric(e.to_string()))?
        .inverse_cdf(0.975);
    let std_errors: Vec<f64> = (0..p).map(|k| (s2 * xtx_inv[(k, k)]).max(0.0).sqrt()).collect();
    Ok(LinearFit {
        coefficients: beta.iter().copied().collect(),
        ci95_half_width: std_errors.iter().map(|s| t * s).collect(),
        std_errors,
        residual_rms: (resid.norm_squared() / n as f64).sqrt(),
        condition_number: condition,
        dof,
    })
}
