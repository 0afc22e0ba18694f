//! Critical-time windows and post-hoc burst verification.

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::ProfilePoint;
use crate::series::{from_decimal_year, to_decimal_year, CalendarDate, PriceSeries};

/// Default relative sse slack for profile intervals.
pub const DEFAULT_SLACK: f64 = 0.05;
pub const DEFAULT_BURST_THRESHOLD: f64 = 0.15;
pub const DEFAULT_HORIZON_DAYS: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("profile has no valid points")]
    EmptyProfile,
    #[error("slack must be positive, got {0}")]
    InvalidSlack(f64),
    #[error("window holds {found} samples, need at least 2")]
    TooFewSamples { found: usize },
    #[error("series ends {last} but the horizon runs to {needed}")]
    InsufficientData {
        last: CalendarDate,
        needed: CalendarDate,
    },
    #[error("horizon must be at least one day")]
    EmptyHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalWindow {
    pub point: CalendarDate,
    pub start: CalendarDate,
    pub end: CalendarDate,
    /// Critical time of the profile minimum.
    pub t_c: f64,
    pub slack: f64,
}

impl CriticalWindow {
    /// A window pinned to one day.
    pub fn on(date: CalendarDate) -> Self {
        Self {
            point: date,
            start: date,
            end: date,
            t_c: to_decimal_year(date),
            slack: 0.0,
        }
    }
}

/// Point estimate at the profile minimum and the calendar span of all grid
/// critical times whose sse is within `(1 + slack)` of it.
pub fn critical_window(
    profile: &[ProfilePoint],
    slack: f64,
) -> Result<CriticalWindow, ForecastError> {
    if !(slack > 0.0) {
        return Err(ForecastError::InvalidSlack(slack));
    }
    let best = profile
        .iter()
        .filter(|p| p.sse().is_finite())
        .min_by(|a, b| a.sse().total_cmp(&b.sse()).then(a.t_c.total_cmp(&b.t_c)))
        .ok_or(ForecastError::EmptyProfile)?;
    let limit = (1.0 + slack) * best.sse();
    let inside = profile.iter().filter(|p| p.sse() <= limit);
    let (lo, hi) = inside.fold((best.t_c, best.t_c), |(lo, hi), p| {
        (lo.min(p.t_c), hi.max(p.t_c))
    });
    Ok(CriticalWindow {
        point: from_decimal_year(best.t_c),
        start: from_decimal_year(lo),
        end: from_decimal_year(hi),
        t_c: best.t_c,
        slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub t: f64,
    pub date: CalendarDate,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawdownReport {
    pub peak: PricePoint,
    pub trough: PricePoint,
    pub drop_fraction: f64,
}

/// Largest price in `[t_from, t_to]` and the lowest price at or after it
/// within the window. The earliest sample wins ties for the peak.
pub fn drawdown(
    series: &PriceSeries,
    t_from: f64,
    t_to: f64,
) -> Result<DrawdownReport, ForecastError> {
    let samples: Vec<_> = series
        .samples()
        .iter()
        .filter(|s| s.t >= t_from && s.t <= t_to)
        .collect();
    if samples.len() < 2 {
        return Err(ForecastError::TooFewSamples {
            found: samples.len(),
        });
    }
    let mut peak_idx = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.price > samples[peak_idx].price {
            peak_idx = i;
        }
    }
    let mut trough_idx = peak_idx;
    for (i, s) in samples.iter().enumerate().skip(peak_idx) {
        if s.price < samples[trough_idx].price {
            trough_idx = i;
        }
    }
    let point = |i: usize| PricePoint {
        t: samples[i].t,
        date: from_decimal_year(samples[i].t),
        price: samples[i].price,
    };
    let (peak, trough) = (point(peak_idx), point(trough_idx));
    Ok(DrawdownReport {
        peak,
        trough,
        drop_fraction: 1.0 - trough.price / peak.price,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstVerification {
    pub burst: bool,
    pub threshold: f64,
    pub horizon_days: u32,
    pub window_start: CalendarDate,
    /// Last calendar day covered by the horizon.
    pub horizon_end: CalendarDate,
    pub drawdown: DrawdownReport,
    /// Days from the window start to the peak and to the trough.
    pub peak_lag_days: i64,
    pub trough_lag_days: i64,
}

/// Checks whether prices fell by at least `threshold` within `horizon_days`
/// calendar days counted from the window start (the start day included).
pub fn verify_burst(
    series: &PriceSeries,
    window: &CriticalWindow,
    threshold: f64,
    horizon_days: u32,
) -> Result<BurstVerification, ForecastError> {
    if horizon_days == 0 {
        return Err(ForecastError::EmptyHorizon);
    }
    let start = window.start;
    let horizon_end = start + Duration::days(horizon_days as i64 - 1);
    let last = series
        .last()
        .map(|s| from_decimal_year(s.t))
        .ok_or(ForecastError::TooFewSamples { found: 0 })?;
    if last < horizon_end {
        return Err(ForecastError::InsufficientData {
            last,
            needed: horizon_end,
        });
    }
    // Samples are dated to the day, so the horizon's last day is inclusive.
    let dd = drawdown(series, to_decimal_year(start), to_decimal_year(horizon_end))?;
    Ok(BurstVerification {
        burst: dd.drop_fraction >= threshold,
        threshold,
        horizon_days,
        window_start: start,
        horizon_end,
        peak_lag_days: (dd.peak.date - start).num_days(),
        trough_lag_days: (dd.trough.date - start).num_days(),
        drawdown: dd,
    })
}
