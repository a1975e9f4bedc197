//! Trial-level estimators: means with standard errors, empirical CDFs and
//! quantiles, the one-parameter exponential CDF fit and log-log slopes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SsmlError};

/// Sample mean with its standard error (`NaN` when fewer than two samples).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            f64::NAN
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Some(Self { mean, se, n })
    }

    /// `|mean - target| <= sigmas * se`.
    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.se
    }
}

/// Stopping time of one trial; censored trials carry the cap in `shots`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopSample {
    pub shots: u64,
    pub halted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub n: u64,
    pub p: f64,
}

/// `P(T <= N)` on a grid. Censored trials count toward the denominator only.
pub fn empirical_cdf(samples: &[StopSample], grid: &[u64]) -> Vec<CdfPoint> {
    let mut halted: Vec<u64> = samples.iter().filter(|s| s.halted).map(|s| s.shots).collect();
    halted.sort_unstable();
    let total = samples.len().max(1) as f64;
    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_unstable();
    sorted_grid.dedup();
    sorted_grid
        .into_iter()
        .map(|n| {
            let count = halted.partition_point(|&t| t <= n);
            CdfPoint {
                n,
                p: count as f64 / total,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Quantile {
    Identified(u64),
    /// Too many censored trials to locate the quantile.
    NotIdentifiable,
}

/// Smallest observed `N` with empirical `P(T <= N) >= 1 - delta`.
pub fn empirical_quantile(samples: &[StopSample], delta: f64) -> Result<Quantile> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SsmlError::param(format!("delta = {delta} must lie in (0, 1)")));
    }
    if samples.is_empty() {
        return Err(SsmlError::param("no samples"));
    }
    let n = samples.len();
    let mut halted: Vec<u64> = samples.iter().filter(|s| s.halted).map(|s| s.shots).collect();
    let censored_fraction = (n - halted.len()) as f64 / n as f64;
    if censored_fraction >= delta {
        return Ok(Quantile::NotIdentifiable);
    }
    halted.sort_unstable();
    let level = 1.0 - delta;
    let reaches = |count: usize| count as f64 / n as f64 >= level - 1e-12;
    let mut count = ((level * n as f64).ceil() as usize).clamp(1, n);
    while count > 1 && reaches(count - 1) {
        count -= 1;
    }
    while !reaches(count) {
        count += 1;
    }
    match halted.get(count - 1) {
        Some(&t) => Ok(Quantile::Identified(t)),
        None => Ok(Quantile::NotIdentifiable),
    }
}

/// Points with `P >= 1 - EXCLUDE_SATURATED` carry no survival information.
pub const EXCLUDE_SATURATED: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    /// Characteristic scale in `P(N) = 1 - exp(-N / N_c)`.
    pub nc: f64,
    /// RMS of `-ln(1 - P) - N / N_c` over the points used.
    pub rms_residual: f64,
    pub max_abs_residual: f64,
    pub points_used: usize,
}

/// Least-squares fit of `-ln(1 - P)` against `N` through the origin.
pub fn fit_exponential_cdf(points: &[CdfPoint]) -> Result<ExpFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|pt| pt.p > 0.0 && pt.p < 1.0 - EXCLUDE_SATURATED)
        .map(|pt| (pt.n as f64, -(-pt.p).ln_1p()))
        .collect();
    if usable.len() < 3 {
        return Err(SsmlError::Fit(format!(
            "need at least 3 points with 0 < P < 1, have {}",
            usable.len()
        )));
    }
    let sxy: f64 = usable.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| x * x).sum();
    let slope = sxy / sxx;
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(SsmlError::Fit(format!("nonpositive decay rate {slope}")));
    }
    let residuals: Vec<f64> = usable.iter().map(|(x, y)| y - slope * x).collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    let max_abs = residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    Ok(ExpFit {
        nc: 1.0 / slope,
        rms_residual: rms,
        max_abs_residual: max_abs,
        points_used: usable.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub intercept_se: f64,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn loglog_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 3 {
        return Err(SsmlError::Fit(format!("need at least 3 pairs, have {}", pairs.len())));
    }
    if let Some(bad) = pairs.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(SsmlError::param(format!(
            "log-log fit needs positive values, got {bad:?}"
        )));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SsmlError::Fit("all x values coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let sigma2 = rss / (n - 2.0);
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / n + mx * mx / sxx)).sqrt();
    Ok(SlopeFit {
        slope,
        slope_se,
        intercept,
        intercept_se,
    })
}
