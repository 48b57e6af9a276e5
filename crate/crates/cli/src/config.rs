//! Experiment configuration: the JSON document, flag overrides, defaults and the
//! config hash.
//!
//! Precedence, lowest first: built-in defaults for the experiment, the JSON
//! config file, command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use polarpath::ChartKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum ExperimentId {
    Identities,
    EffectiveGenerator,
    KernelConvergence,
    ScaledVsUnscaled,
    OracleCrosscheck,
    DeltaLimit,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        Self::Identities,
        Self::EffectiveGenerator,
        Self::KernelConvergence,
        Self::ScaledVsUnscaled,
        Self::OracleCrosscheck,
        Self::DeltaLimit,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Identities => "identities",
            Self::EffectiveGenerator => "effective_generator",
            Self::KernelConvergence => "kernel_convergence",
            Self::ScaledVsUnscaled => "scaled_vs_unscaled",
            Self::OracleCrosscheck => "oracle_crosscheck",
            Self::DeltaLimit => "delta_limit",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Self::Identities => "odd-number sums and β-moments against closed forms and quadrature",
            Self::EffectiveGenerator => "finite-N generator against the Laplace-Beltrami operator, with fitted order",
            Self::KernelConvergence => "sliced kernel against the exact kernel on two grids",
            Self::ScaledVsUnscaled => "scaled and unscaled kernel dumps on one polar grid",
            Self::OracleCrosscheck => "closed form, Bessel series and image sum on seeded point pairs",
            Self::DeltaLimit => "short-time kernel applied to probe functions as ε shrinks",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A scalar or a list in the JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(x) => vec![x.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_r: Option<i64>,
    pub n_theta: Option<i64>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
}

/// The JSON document as written by the user. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<ExperimentId>,
    pub chart: Option<String>,
    pub hbar: Option<f64>,
    pub mass: Option<f64>,
    #[serde(rename = "N")]
    pub n: Option<OneOrMany<i64>>,
    #[serde(rename = "N_max")]
    pub n_max: Option<i64>,
    pub eps: Option<OneOrMany<f64>>,
    pub tau: Option<f64>,
    pub grid: Option<GridSpec>,
    pub alpha: Option<String>,
    pub seed: Option<u64>,
    pub pairs: Option<i64>,
    pub l_max: Option<i64>,
    pub m_max: Option<i64>,
    pub tolerance: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

impl RawConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(experiment, chart, hbar, mass, n, n_max, eps, tau, alpha, seed, pairs, l_max, m_max, tolerance, output_dir);
        if let Some(g) = other.grid {
            let mut base = self.grid.unwrap_or_default();
            if g.n_r.is_some() {
                base.n_r = g.n_r;
            }
            if g.n_theta.is_some() {
                base.n_theta = g.n_theta;
            }
            if g.r_min.is_some() {
                base.r_min = g.r_min;
            }
            if g.r_max.is_some() {
                base.r_max = g.r_max;
            }
            self.grid = Some(base);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub n_r: usize,
    pub n_theta: usize,
    pub r_min: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    Unit,
    SqrtG,
}

/// A validated configuration with every default filled in. Serialised in field
/// order, it is the hashed content.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub chart: ChartKind,
    pub hbar: f64,
    pub mass: f64,
    #[serde(rename = "N")]
    pub n: Vec<u64>,
    #[serde(rename = "N_max")]
    pub n_max: u64,
    pub eps: Vec<f64>,
    pub tau: f64,
    pub grid: Grid,
    pub alpha: AlphaChoice,
    pub seed: u64,
    pub pairs: usize,
    pub l_max: usize,
    pub m_max: usize,
    pub tolerance: f64,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

struct Defaults {
    chart: ChartKind,
    n: &'static [u64],
    eps: &'static [f64],
    tau: f64,
    grid: Grid,
    alpha: AlphaChoice,
    tolerance: f64,
}

fn defaults(e: ExperimentId) -> Defaults {
    let grid = Grid {
        n_r: 64,
        n_theta: 64,
        r_min: 0.0,
        r_max: 6.0,
    };
    match e {
        ExperimentId::Identities => Defaults {
            chart: ChartKind::Polar2d,
            n: &[1, 10, 100],
            eps: &[],
            tau: 1.0,
            grid,
            alpha: AlphaChoice::SqrtG,
            tolerance: 1e-10,
        },
        ExperimentId::EffectiveGenerator => Defaults {
            chart: ChartKind::Polar2d,
            n: &[16, 32, 64, 128, 256],
            eps: &[],
            tau: 1.0,
            grid: Grid {
                n_r: 401,
                n_theta: 256,
                r_min: 1.0,
                r_max: 3.0,
            },
            alpha: AlphaChoice::SqrtG,
            tolerance: 1e-3,
        },
        ExperimentId::KernelConvergence => Defaults {
            chart: ChartKind::Cartesian2d,
            n: &[8],
            eps: &[],
            tau: 0.5,
            grid,
            alpha: AlphaChoice::Unit,
            tolerance: 0.02,
        },
        ExperimentId::ScaledVsUnscaled => Defaults {
            chart: ChartKind::Polar2d,
            n: &[2],
            eps: &[],
            tau: 0.2,
            grid: Grid {
                n_r: 32,
                n_theta: 32,
                r_min: 0.0,
                r_max: 4.0,
            },
            alpha: AlphaChoice::Unit,
            tolerance: 1e-12,
        },
        ExperimentId::OracleCrosscheck => Defaults {
            chart: ChartKind::Polar2d,
            n: &[1],
            eps: &[],
            tau: 0.5,
            grid,
            alpha: AlphaChoice::SqrtG,
            tolerance: 1e-4,
        },
        ExperimentId::DeltaLimit => Defaults {
            chart: ChartKind::Polar2d,
            n: &[1],
            eps: &[1e-2, 5e-3, 2e-3, 1e-3],
            tau: 1.0,
            grid,
            alpha: AlphaChoice::Unit,
            tolerance: 1e-3,
        },
    }
}

fn bad(field: &str, reason: impl fmt::Display) -> CliError {
    CliError::Config(format!("invalid `{field}`: {reason}"))
}

fn positive_count(field: &str, v: i64) -> Result<u64, CliError> {
    if v <= 0 {
        return Err(bad(field, format!("must be a positive integer, got {v}")));
    }
    Ok(v as u64)
}

fn positive_real(field: &str, v: f64) -> Result<f64, CliError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(bad(field, format!("must be a positive finite number, got {v}")));
    }
    Ok(v)
}

impl ExperimentConfig {
    pub fn resolve(raw: RawConfig) -> Result<Self, CliError> {
        let experiment = raw
            .experiment
            .ok_or_else(|| bad("experiment", "no experiment given on the command line or in the config"))?;
        let d = defaults(experiment);
        let chart = match raw.chart.as_deref() {
            Some(s) => s.parse::<ChartKind>().map_err(|e| bad("chart", e))?,
            None => d.chart,
        };
        let hbar = positive_real("hbar", raw.hbar.unwrap_or(1.0))?;
        let mass = positive_real("mass", raw.mass.unwrap_or(1.0))?;
        let n = match &raw.n {
            Some(list) => {
                let v = list.to_vec();
                if v.is_empty() {
                    return Err(bad("N", "empty list"));
                }
                v.into_iter().map(|x| positive_count("N", x)).collect::<Result<Vec<_>, _>>()?
            }
            None => d.n.to_vec(),
        };
        let n_max = positive_count("N_max", raw.n_max.unwrap_or(10_000))?;
        let eps = match &raw.eps {
            Some(list) => list
                .to_vec()
                .into_iter()
                .map(|x| positive_real("eps", x))
                .collect::<Result<Vec<_>, _>>()?,
            None => d.eps.to_vec(),
        };
        let tau = positive_real("tau", raw.tau.unwrap_or(d.tau))?;
        let g = raw.grid.unwrap_or_default();
        let grid = Grid {
            n_r: positive_count("grid.n_r", g.n_r.unwrap_or(d.grid.n_r as i64))? as usize,
            n_theta: positive_count("grid.n_theta", g.n_theta.unwrap_or(d.grid.n_theta as i64))? as usize,
            r_min: g.r_min.unwrap_or(d.grid.r_min),
            r_max: positive_real("grid.r_max", g.r_max.unwrap_or(d.grid.r_max))?,
        };
        if !(grid.r_min >= 0.0) || grid.r_min >= grid.r_max {
            return Err(bad("grid.r_min", format!("must lie in [0, r_max), got {}", grid.r_min)));
        }
        let alpha = match raw.alpha.as_deref() {
            None => d.alpha,
            Some("unit") => AlphaChoice::Unit,
            Some("sqrt_g") => AlphaChoice::SqrtG,
            Some(other) => return Err(bad("alpha", format!("expected `unit` or `sqrt_g`, got `{other}`"))),
        };
        let pairs = positive_count("pairs", raw.pairs.unwrap_or(20))? as usize;
        let l_max = positive_count("l_max", raw.l_max.unwrap_or(64))? as usize;
        let m_max = positive_count("m_max", raw.m_max.unwrap_or(8))? as usize;
        let tolerance = positive_real("tolerance", raw.tolerance.unwrap_or(d.tolerance))?;
        let cfg = Self {
            experiment,
            chart,
            hbar,
            mass,
            n,
            n_max,
            eps,
            tau,
            grid,
            alpha,
            seed: raw.seed.unwrap_or(0),
            pairs,
            l_max,
            m_max,
            tolerance,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.check_experiment()?;
        Ok(cfg)
    }

    fn check_experiment(&self) -> Result<(), CliError> {
        match self.experiment {
            ExperimentId::EffectiveGenerator => {
                if self.n.len() < 2 || self.n.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("N", "needs an increasing list of at least two slice counts"));
                }
                if self.chart != ChartKind::Polar2d {
                    return Err(bad("chart", "effective_generator runs on polar2d"));
                }
            }
            ExperimentId::KernelConvergence | ExperimentId::ScaledVsUnscaled => {
                if self.n.len() != 1 {
                    return Err(bad("N", "takes a single slice count"));
                }
                if self.grid.n_r < 16 {
                    return Err(bad("grid.n_r", "needs at least 16 nodes"));
                }
                if self.experiment == ExperimentId::ScaledVsUnscaled && self.chart != ChartKind::Polar2d {
                    return Err(bad("chart", "scaled_vs_unscaled runs on polar2d"));
                }
            }
            ExperimentId::DeltaLimit => {
                if self.eps.windows(2).any(|w| w[1] >= w[0]) || self.eps.is_empty() {
                    return Err(bad("eps", "needs a decreasing list"));
                }
            }
            ExperimentId::Identities | ExperimentId::OracleCrosscheck => {}
        }
        Ok(())
    }

    pub fn units(&self) -> polarpath::Units64 {
        polarpath::Units {
            hbar: self.hbar,
            mass: self.mass,
        }
    }

    /// SHA-256 of the canonical JSON of the resolved config. The output directory
    /// and run timestamp are not part of it.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
