//! Power-law scaling fits: log-space binning, weighted least squares
//! and regime classification.
//!
//! A city system is a set of (population N, count Y) pairs assumed to
//! follow Y = Y0 * N^beta. Fitting works on the log-log form: cities are
//! binned in log N, each bin contributes its mean log N and mean log Y,
//! and a weighted line fit estimates beta. Bin weights default to the
//! summed count, reading "larger totals carry less error" as variance
//! inversely proportional to the bin's total count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One city's population and measured count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityObservation {
    pub city_id: String,
    pub population: u64,
    pub count: f64,
}

/// Aggregated bin on the log-log plane.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedPoint {
    pub mean_log_n: f64,
    pub mean_log_y: f64,
    pub n_cities: usize,
    /// Total count over the bin's cities.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightMode {
    /// Weight each bin by its summed count (variance ~ 1 / total).
    #[default]
    CountSum,
    /// Unweighted fit, kept for sensitivity checks.
    Uniform,
}

impl WeightMode {
    pub fn parse(s: &str) -> Option<WeightMode> {
        match s {
            "count-sum" => Some(WeightMode::CountSum),
            "uniform" => Some(WeightMode::Uniform),
            _ => None,
        }
    }
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightMode::CountSum => "count-sum",
            WeightMode::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Sublinear,
    Linear,
    Superlinear,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Sublinear => "sublinear",
            Regime::Linear => "linear",
            Regime::Superlinear => "superlinear",
        })
    }
}

/// Fitted scaling relation. `log_y0` is the natural-log intercept; use
/// [`ScalingFit::log10_y0`] for the base-10 rendering in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub beta: f64,
    pub beta_stderr: f64,
    pub log_y0: f64,
    pub r2: f64,
    pub n_bins: usize,
    pub n_cities: usize,
    pub zero_cities_excluded: usize,
    pub regime: Regime,
    /// Set when the two-bin convention forced a zero standard error.
    pub warning: Option<String>,
}

impl ScalingFit {
    pub fn log10_y0(&self) -> f64 {
        self.log_y0 / std::f64::consts::LN_10
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitError {
    #[error("need at least 2 bins, requested {0}")]
    InvalidBinCount(usize),
    #[error("need at least 2 observations with positive counts, found {surviving}")]
    TooFewObservations { surviving: usize },
    #[error("populations carry no spread; need at least 2 distinct values")]
    NoPopulationSpread,
    #[error("need at least 2 bins to fit, found {0}")]
    TooFewBins(usize),
    #[error("bin abscissae are all equal; slope is undefined")]
    DegenerateAbscissa,
    #[error("negative count for city {city_id}")]
    NegativeCount { city_id: String },
}

impl FitError {
    /// Short slug used in report rows.
    pub fn code(&self) -> &'static str {
        match self {
            FitError::InvalidBinCount(_) => "invalid-bin-count",
            FitError::TooFewObservations { .. } => "too-few-observations",
            FitError::NoPopulationSpread => "no-population-spread",
            FitError::TooFewBins(_) => "too-few-bins",
            FitError::DegenerateAbscissa => "degenerate-abscissa",
            FitError::NegativeCount { .. } => "negative-count",
        }
    }
}

/// Points within this distance of a bin's upper edge (in log space)
/// count as inside the bin, so values that land mathematically on an
/// edge do not leak into the next bin through rounding.
const EDGE_TOLERANCE: f64 = 1e-9;

/// Bins observations into `n_bins` equal-width intervals of log N
/// between the smallest and largest surviving population. Zero-count
/// observations are dropped first (their log is undefined); every bin
/// includes its upper edge and empty bins are omitted.
pub fn bin_logspace(obs: &[CityObservation], n_bins: usize) -> Result<Vec<BinnedPoint>, FitError> {
    if n_bins < 2 {
        return Err(FitError::InvalidBinCount(n_bins));
    }
    for o in obs {
        if o.count < 0.0 {
            return Err(FitError::NegativeCount {
                city_id: o.city_id.clone(),
            });
        }
    }
    let survivors: Vec<&CityObservation> = obs.iter().filter(|o| o.count > 0.0).collect();
    if survivors.len() < 2 {
        return Err(FitError::TooFewObservations {
            surviving: survivors.len(),
        });
    }
    let lo_pop = survivors
        .iter()
        .map(|o| o.population)
        .min()
        .expect("nonempty");
    let hi_pop = survivors
        .iter()
        .map(|o| o.population)
        .max()
        .expect("nonempty");
    if lo_pop == hi_pop {
        return Err(FitError::NoPopulationSpread);
    }
    let lo = (lo_pop as f64).ln();
    let hi = (hi_pop as f64).ln();
    let width = (hi - lo) / n_bins as f64;

    #[derive(Default, Clone)]
    struct Acc {
        sum_log_n: f64,
        sum_log_y: f64,
        count: usize,
        weight: f64,
    }
    let mut bins = vec![Acc::default(); n_bins];
    for o in survivors {
        let x = (o.population as f64).ln();
        let mut idx = n_bins - 1;
        for i in 0..n_bins {
            let upper = if i == n_bins - 1 {
                hi
            } else {
                lo + (i + 1) as f64 * width
            };
            if x <= upper + EDGE_TOLERANCE {
                idx = i;
                break;
            }
        }
        let acc = &mut bins[idx];
        acc.sum_log_n += x;
        acc.sum_log_y += o.count.ln();
        acc.count += 1;
        acc.weight += o.count;
    }

    Ok(bins
        .into_iter()
        .filter(|a| a.count > 0)
        .map(|a| BinnedPoint {
            mean_log_n: a.sum_log_n / a.count as f64,
            mean_log_y: a.sum_log_y / a.count as f64,
            n_cities: a.count,
            weight: a.weight,
        })
        .collect())
}

/// Weighted least squares on the binned points.
///
/// With weights w the slope is `sum w (x-xm)(y-ym) / sum w (x-xm)^2`;
/// the slope's standard error uses the weighted residual variance with
/// k-2 degrees of freedom, and a two-bin fit reports stderr 0 with a
/// warning instead of failing. The regime is superlinear when
/// `beta - 1 > stderr`, sublinear when `1 - beta > stderr`, else linear.
pub fn fit_wls(bins: &[BinnedPoint], mode: WeightMode) -> Result<ScalingFit, FitError> {
    let k = bins.len();
    if k < 2 {
        return Err(FitError::TooFewBins(k));
    }
    let weights: Vec<f64> = bins
        .iter()
        .map(|b| match mode {
            WeightMode::CountSum => {
                debug_assert!(b.weight > 0.0, "bin weight must be positive");
                b.weight
            }
            WeightMode::Uniform => 1.0,
        })
        .collect();
    let sw: f64 = weights.iter().sum();
    let xm = bins
        .iter()
        .zip(&weights)
        .map(|(b, w)| w * b.mean_log_n)
        .sum::<f64>()
        / sw;
    let ym = bins
        .iter()
        .zip(&weights)
        .map(|(b, w)| w * b.mean_log_y)
        .sum::<f64>()
        / sw;
    let sxx: f64 = bins
        .iter()
        .zip(&weights)
        .map(|(b, w)| w * (b.mean_log_n - xm).powi(2))
        .sum();
    if sxx <= 0.0 {
        return Err(FitError::DegenerateAbscissa);
    }
    let sxy: f64 = bins
        .iter()
        .zip(&weights)
        .map(|(b, w)| w * (b.mean_log_n - xm) * (b.mean_log_y - ym))
        .sum();
    let beta = sxy / sxx;
    let intercept = ym - beta * xm;

    let sse: f64 = bins
        .iter()
        .zip(&weights)
        .map(|(b, w)| {
            let r = b.mean_log_y - (intercept + beta * b.mean_log_n);
            w * r * r
        })
        .sum();
    let sst: f64 = bins
        .iter()
        .zip(&weights)
        .map(|(b, w)| w * (b.mean_log_y - ym).powi(2))
        .sum();
    let r2 = if sst > 0.0 {
        (1.0 - sse / sst).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let (stderr, warning) = if k == 2 {
        (
            0.0,
            Some("two-bin fit: stderr reported as 0 by convention".to_string()),
        )
    } else {
        ((sse / (k as f64 - 2.0) / sxx).sqrt(), None)
    };

    Ok(ScalingFit {
        beta,
        beta_stderr: stderr,
        log_y0: intercept,
        r2,
        n_bins: k,
        n_cities: bins.iter().map(|b| b.n_cities).sum(),
        zero_cities_excluded: 0,
        regime: classify_regime(beta, stderr),
        warning,
    })
}

/// Regime rule: the distance of beta from 1 must exceed its own
/// standard error to leave the linear band.
pub fn classify_regime(beta: f64, stderr: f64) -> Regime {
    if beta - 1.0 > stderr {
        Regime::Superlinear
    } else if 1.0 - beta > stderr {
        Regime::Sublinear
    } else {
        Regime::Linear
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_bins: usize,
    pub weight_mode: WeightMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_bins: 15,
            weight_mode: WeightMode::CountSum,
        }
    }
}

/// Binning plus fit in one step; also reports the surviving city count
/// and how many zero-count cities the binning excluded.
pub fn fit_scaling(obs: &[CityObservation], config: &FitConfig) -> Result<ScalingFit, FitError> {
    let bins = bin_logspace(obs, config.n_bins)?;
    let mut fit = fit_wls(&bins, config.weight_mode)?;
    fit.n_bins = bins.len();
    fit.zero_cities_excluded = obs.iter().filter(|o| o.count == 0.0).count();
    fit.n_cities = obs.len() - fit.zero_cities_excluded;
    Ok(fit)
}
