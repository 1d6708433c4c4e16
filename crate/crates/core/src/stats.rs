//! Stylized-fact estimators: autocorrelation, excess kurtosis, Hill tail
//! index and QQ data against the standard normal.

use std::ops::Deref;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Logarithmic (or raw log-price difference) returns of one price path.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientSample(format!(
                "return series needs at least 1 entry, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InsufficientSample(format!(
                "non-finite return {bad}"
            )));
        }
        Ok(ReturnSeries { values })
    }

    /// Differences of a log-price path, `P[k+1] - P[k]`.
    pub fn from_log_prices(log_prices: &[f64]) -> Result<Self> {
        Self::new(log_prices.windows(2).map(|w| w[1] - w[0]).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn abs(&self) -> ReturnSeries {
        ReturnSeries {
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }
}

impl Deref for ReturnSeries {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// `ln(p[k+1] / p[k])` for a strictly positive price path.
pub fn log_returns(prices: &[f64]) -> Result<ReturnSeries> {
    if let Some((step, &price)) = prices.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::NonPositivePrice {
            step: step as u64,
            price,
        });
    }
    ReturnSeries::new(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample autocorrelation for lags `0..=max_lag`.
///
/// Lagged cross products are normalized by the full-sample sum of squares,
/// which keeps `|C(l)| <= 1` and `C(0) == 1`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::InsufficientSample(format!(
            "max lag {max_lag} needs more than {n} observations"
        )));
    }
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    let denom: f64 = centered.iter().map(|x| x * x).sum();
    if !(denom > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(1.0);
    for lag in 1..=max_lag {
        let num: f64 = centered[lag..]
            .iter()
            .zip(&centered[..n - lag])
            .map(|(a, b)| a * b)
            .sum();
        acf.push((num / denom).clamp(-1.0, 1.0));
    }
    Ok(acf)
}

/// `m4 / m2^2 - 3` with central sample moments, no small-sample correction.
pub fn excess_kurtosis(series: &[f64]) -> Result<f64> {
    if series.len() < 4 {
        return Err(Error::InsufficientSample(format!(
            "kurtosis needs at least 4 observations, got {}",
            series.len()
        )));
    }
    let m = mean(series);
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in series {
        let d = (x - m) * (x - m);
        m2 += d;
        m4 += d * d;
    }
    let n = series.len() as f64;
    m2 /= n;
    m4 /= n;
    if !(m2 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Hill estimator on the top `k = floor(0.05 n)` order statistics of a
/// strictly positive sample. A flat tail yields `+inf`.
pub fn hill_estimator(sample: &[f64]) -> Result<f64> {
    if let Some(&bad) = sample.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::NonPositiveEntry(bad));
    }
    let k = (0.05 * sample.len() as f64).floor() as usize;
    if k < 1 {
        return Err(Error::InsufficientSample(format!(
            "Hill estimator needs at least 20 observations, got {}",
            sample.len()
        )));
    }
    let mut sorted = sample.to_vec();
    sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let top = &sorted[..k];
    let threshold = top.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_log = top.iter().map(|x| x.ln()).sum::<f64>() / k as f64;
    let spread = mean_log - threshold.ln();
    if spread <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / spread)
}

/// Hill estimator applied to the absolute returns, zeros removed.
pub fn tail_index(returns: &[f64]) -> Result<f64> {
    let magnitudes: Vec<f64> = returns
        .iter()
        .map(|r| r.abs())
        .filter(|r| *r > 0.0)
        .collect();
    hill_estimator(&magnitudes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QqScale {
    /// Series shifted and scaled to zero mean, unit variance first.
    Standardized,
    Raw,
}

/// QQ pairs `(normal quantile, empirical quantile)` at plotting positions
/// `(i - 0.5) / q`, standardized series.
pub fn qq_pairs(series: &[f64], num_quantiles: usize) -> Result<Vec<(f64, f64)>> {
    qq_pairs_scaled(series, num_quantiles, QqScale::Standardized)
}

pub fn qq_pairs_scaled(
    series: &[f64],
    num_quantiles: usize,
    scale: QqScale,
) -> Result<Vec<(f64, f64)>> {
    let n = series.len();
    if num_quantiles == 0 || n < num_quantiles {
        return Err(Error::InsufficientSample(format!(
            "{num_quantiles} quantiles requested from {n} observations"
        )));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (shift, unit) = match scale {
        QqScale::Raw => (0.0, 1.0),
        QqScale::Standardized => {
            let m = mean(&sorted);
            let var = sorted.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            if !(var > 0.0) {
                return Err(Error::ZeroVariance);
            }
            (m, var.sqrt())
        }
    };
    let normal = Normal::standard();
    let pairs = (1..=num_quantiles)
        .map(|i| {
            let p = (i as f64 - 0.5) / num_quantiles as f64;
            let empirical = (hazen_quantile(&sorted, p) - shift) / unit;
            (normal.inverse_cdf(p), empirical)
        })
        .collect();
    Ok(pairs)
}

// Piecewise-linear quantile through the points ((j - 0.5) / n, x_(j)).
fn hazen_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 * p + 0.5).clamp(1.0, n as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= n {
        return sorted[n - 1];
    }
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub n: usize,
    pub excess_kurtosis: f64,
    pub hill: f64,
    /// Lags `1..=L` of the raw return autocorrelation.
    pub acf_raw: Vec<f64>,
    /// Lags `1..=L` of the absolute return autocorrelation.
    pub acf_abs: Vec<f64>,
    pub qq_pairs: Vec<(f64, f64)>,
}

impl StatsReport {
    pub fn compute(series: &ReturnSeries, max_lag: usize, num_quantiles: usize) -> Result<Self> {
        let acf_raw = autocorrelation(series, max_lag)?[1..].to_vec();
        let acf_abs = autocorrelation(&series.abs(), max_lag)?[1..].to_vec();
        let qq = if num_quantiles > 0 {
            qq_pairs(series, num_quantiles)?
        } else {
            Vec::new()
        };
        Ok(StatsReport {
            n: series.len(),
            excess_kurtosis: excess_kurtosis(series)?,
            hill: tail_index(series)?,
            acf_raw,
            acf_abs,
            qq_pairs: qq,
        })
    }

    pub fn mean_acf_raw(&self) -> f64 {
        mean(&self.acf_raw)
    }

    pub fn mean_abs_acf_raw(&self) -> f64 {
        self.acf_raw.iter().map(|c| c.abs()).sum::<f64>() / self.acf_raw.len() as f64
    }

    pub fn mean_acf_abs(&self) -> f64 {
        mean(&self.acf_abs)
    }

    /// Element-wise arithmetic mean of equally shaped reports.
    pub fn mean_of(reports: &[StatsReport]) -> Option<StatsReport> {
        let first = reports.first()?;
        let count = reports.len() as f64;
        let avg = |f: &dyn Fn(&StatsReport) -> f64| reports.iter().map(f).sum::<f64>() / count;
        let avg_vec = |f: &dyn Fn(&StatsReport) -> &Vec<f64>| {
            (0..f(first).len())
                .map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / count)
                .collect::<Vec<_>>()
        };
        let qq_pairs = (0..first.qq_pairs.len())
            .map(|i| {
                (
                    first.qq_pairs[i].0,
                    reports.iter().map(|r| r.qq_pairs[i].1).sum::<f64>() / count,
                )
            })
            .collect();
        Some(StatsReport {
            n: first.n,
            excess_kurtosis: avg(&|r| r.excess_kurtosis),
            hill: avg(&|r| r.hill),
            acf_raw: avg_vec(&|r| &r.acf_raw),
            acf_abs: avg_vec(&|r| &r.acf_abs),
            qq_pairs,
        })
    }
}
