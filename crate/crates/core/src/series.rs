//! Price series: samples dated in decimal years, file ingestion, calendar
//! conversion and CPI deflation.
//!
//! Decimal years follow `year + (day_of_year - 1) / days_in_year`, so the
//! first of January of every year maps to an integer and each calendar day
//! occupies a half-open slice of the year.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Proleptic Gregorian calendar date.
pub type CalendarDate = NaiveDate;

/// A (year, month) pair, month in `1..=12`.
pub type YearMonth = (i32, u32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("line {line}: malformed date `{text}`")]
    MalformedDate { line: usize, text: String },
    #[error("line {line}: malformed price `{text}`")]
    MalformedPrice { line: usize, text: String },
    #[error("line {line}: price must be finite and positive, got {price}")]
    NonPositivePrice { line: usize, price: f64 },
    #[error("line {line}: missing field {field}")]
    MissingField { line: usize, field: usize },
    #[error("duplicate date {date} (lines {first} and {second})")]
    DuplicateDate {
        date: CalendarDate,
        first: usize,
        second: usize,
    },
    #[error("invalid sample at t = {t}: {reason}")]
    InvalidSample { t: f64, reason: &'static str },
    #[error("samples are not strictly increasing in time at index {index}")]
    Unordered { index: usize },
    #[error("line {line}: malformed CPI month `{text}`")]
    MalformedMonth { line: usize, text: String },
    #[error("line {line}: CPI value must be finite and positive, got `{text}`")]
    InvalidIndex { line: usize, text: String },
    #[error("CPI months are not contiguous: {missing_year}-{missing_month:02} is missing")]
    CpiGap {
        missing_year: i32,
        missing_month: u32,
    },
    #[error("duplicate CPI month {year}-{month:02}")]
    DuplicateMonth { year: i32, month: u32 },
    #[error("no CPI value for {year}-{month:02}")]
    MissingCpiMonth { year: i32, month: u32 },
    #[error("window start {start} is after window end {end}")]
    InvertedWindow { start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub price: f64,
}

impl Sample {
    pub fn new(t: f64, price: f64) -> Result<Self, SeriesError> {
        if !t.is_finite() {
            return Err(SeriesError::InvalidSample {
                t,
                reason: "time is not finite",
            });
        }
        if !(price.is_finite() && price > 0.0) {
            return Err(SeriesError::InvalidSample {
                t,
                reason: "price must be finite and strictly positive",
            });
        }
        Ok(Self { t, price })
    }
}

/// Ordered price samples. Times are strictly increasing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceSeries {
    samples: Vec<Sample>,
    pub label: String,
    pub unit: String,
}

impl PriceSeries {
    /// Builds a series from samples that are already in strictly increasing
    /// time order.
    pub fn new(samples: Vec<Sample>) -> Result<Self, SeriesError> {
        for s in &samples {
            Sample::new(s.t, s.price)?;
        }
        if let Some(index) = samples
            .windows(2)
            .position(|w| w[1].t.partial_cmp(&w[0].t) != Some(std::cmp::Ordering::Greater))
        {
            return Err(SeriesError::Unordered { index: index + 1 });
        }
        Ok(Self {
            samples,
            label: String::new(),
            unit: String::new(),
        })
    }

    /// Builds a series from parallel time and price slices.
    pub fn from_points(times: &[f64], prices: &[f64]) -> Result<Self, SeriesError> {
        assert_eq!(
            times.len(),
            prices.len(),
            "times and prices differ in length"
        );
        Self::new(
            times
                .iter()
                .zip(prices)
                .map(|(&t, &price)| Sample { t, price })
                .collect(),
        )
    }

    pub fn with_label(mut self, label: impl Into<String>, unit: impl Into<String>) -> Self {
        self.label = label.into();
        self.unit = unit.into();
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.price).collect()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn mean_price(&self) -> f64 {
        if self.samples.is_empty() {
            return f64::NAN;
        }
        self.samples.iter().map(|s| s.price).sum::<f64>() / self.samples.len() as f64
    }

    /// Samples with `t_start <= t <= t_end`, order preserved.
    pub fn window(&self, t_start: f64, t_end: f64) -> Result<PriceSeries, SeriesError> {
        if t_start > t_end {
            return Err(SeriesError::InvertedWindow {
                start: t_start,
                end: t_end,
            });
        }
        Ok(Self {
            samples: self
                .samples
                .iter()
                .filter(|s| s.t >= t_start && s.t <= t_end)
                .copied()
                .collect(),
            label: self.label.clone(),
            unit: self.unit.clone(),
        })
    }

    /// Replaces each price by `price * cpi[reference] / cpi[month(t)]`.
    pub fn deflate(
        &self,
        cpi: &CpiSeries,
        reference: YearMonth,
    ) -> Result<PriceSeries, SeriesError> {
        let ref_value = cpi.get(reference)?;
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let d = from_decimal_year(s.t);
                let value = cpi.get((d.year(), d.month()))?;
                Ok(Sample {
                    t: s.t,
                    price: s.price * (ref_value / value),
                })
            })
            .collect::<Result<Vec<_>, SeriesError>>()?;
        Ok(Self {
            samples,
            label: self.label.clone(),
            unit: self.unit.clone(),
        })
    }

    /// Converts prices already expressed in `from`-month money into
    /// `to`-month money.
    pub fn rereference(
        &self,
        cpi: &CpiSeries,
        from: YearMonth,
        to: YearMonth,
    ) -> Result<PriceSeries, SeriesError> {
        let ratio = cpi.get(to)? / cpi.get(from)?;
        Ok(Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    t: s.t,
                    price: s.price * ratio,
                })
                .collect(),
            label: self.label.clone(),
            unit: self.unit.clone(),
        })
    }

    /// Writes the series in the price-file format, one `YYYY-MM-DD,price`
    /// line per sample. Prices use the shortest representation that parses
    /// back to the same `f64`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 24);
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{}",
                from_decimal_year(s.t).format("%Y-%m-%d"),
                s.price
            );
        }
        out
    }
}

/// How [`parse_series`] treats repeated dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplicatePolicy {
    #[default]
    Reject,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    pub duplicates: DuplicatePolicy,
    /// Zero-based field holding the price. Field 0 is the date; the default
    /// of 1 reads two-column files, larger values pick e.g. the close out of
    /// an open/high/low/close record.
    pub price_field: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            duplicates: DuplicatePolicy::Reject,
            price_field: 1,
        }
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses a price file. Lines are `YYYY-MM-DD,price`; `#` starts a comment
/// line and a single leading header line is skipped when its price field is
/// not numeric.
pub fn parse_series(text: &str, options: ParseOptions) -> Result<PriceSeries, SeriesError> {
    let mut by_date: BTreeMap<CalendarDate, (usize, f64)> = BTreeMap::new();
    for (n, (line, content)) in data_lines(text).enumerate() {
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        let price_text = fields.get(options.price_field).copied();
        if n == 0 {
            if let Some(p) = price_text {
                if p.parse::<f64>().is_err() {
                    continue;
                }
            }
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|_| {
            SeriesError::MalformedDate {
                line,
                text: fields[0].to_string(),
            }
        })?;
        let price_text = price_text.ok_or(SeriesError::MissingField {
            line,
            field: options.price_field,
        })?;
        let price: f64 = price_text
            .parse()
            .map_err(|_| SeriesError::MalformedPrice {
                line,
                text: price_text.to_string(),
            })?;
        if !(price.is_finite() && price > 0.0) {
            return Err(SeriesError::NonPositivePrice { line, price });
        }
        if let Some(&(first, _)) = by_date.get(&date) {
            if options.duplicates == DuplicatePolicy::Reject {
                return Err(SeriesError::DuplicateDate {
                    date,
                    first,
                    second: line,
                });
            }
        }
        by_date.insert(date, (line, price));
    }
    PriceSeries::new(
        by_date
            .into_iter()
            .map(|(d, (_, price))| Sample {
                t: to_decimal_year(d),
                price,
            })
            .collect(),
    )
}

fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 12, 31).map(|d| d.ordinal()) == Some(366) {
        366
    } else {
        365
    }
}

pub fn to_decimal_year(date: CalendarDate) -> f64 {
    date.year() as f64 + (date.ordinal0() as f64) / days_in_year(date.year()) as f64
}

/// Calendar day containing decimal year `t`.
///
/// A fraction that lands within 1e-7 of a day boundary snaps to the later
/// day; this absorbs the rounding of `year + k / days` so that every
/// date round-trips through [`to_decimal_year`].
pub fn from_decimal_year(t: f64) -> CalendarDate {
    assert!(t.is_finite(), "decimal year must be finite");
    let mut year = t.floor() as i32;
    let days = days_in_year(year);
    let mut ordinal0 = ((t - year as f64) * days as f64 + 1e-7).floor() as u32;
    if ordinal0 >= days {
        year += 1;
        ordinal0 = 0;
    }
    NaiveDate::from_yo_opt(year, ordinal0 + 1).expect("ordinal within year")
}

/// Monthly price index, keyed by (year, month) with no gaps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CpiSeries {
    entries: BTreeMap<YearMonth, f64>,
}

fn next_month((y, m): YearMonth) -> YearMonth {
    if m == 12 {
        (y + 1, 1)
    } else {
        (y, m + 1)
    }
}

impl CpiSeries {
    pub fn new(entries: BTreeMap<YearMonth, f64>) -> Result<Self, SeriesError> {
        for (&(year, month), &v) in &entries {
            if !(1..=12).contains(&month) {
                return Err(SeriesError::MalformedMonth {
                    line: 0,
                    text: format!("{year}-{month:02}"),
                });
            }
            if !(v.is_finite() && v > 0.0) {
                return Err(SeriesError::InvalidIndex {
                    line: 0,
                    text: v.to_string(),
                });
            }
        }
        let keys: Vec<_> = entries.keys().copied().collect();
        for w in keys.windows(2) {
            let expected = next_month(w[0]);
            if w[1] != expected {
                return Err(SeriesError::CpiGap {
                    missing_year: expected.0,
                    missing_month: expected.1,
                });
            }
        }
        Ok(Self { entries })
    }

    /// A single value repeated over `[from, to]`.
    pub fn constant(from: YearMonth, to: YearMonth, value: f64) -> Result<Self, SeriesError> {
        let mut entries = BTreeMap::new();
        let mut ym = from;
        while ym <= to {
            entries.insert(ym, value);
            ym = next_month(ym);
        }
        Self::new(entries)
    }

    pub fn get(&self, (year, month): YearMonth) -> Result<f64, SeriesError> {
        self.entries
            .get(&(year, month))
            .copied()
            .ok_or(SeriesError::MissingCpiMonth { year, month })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (YearMonth, f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }
}

pub fn parse_year_month(text: &str) -> Option<YearMonth> {
    let (y, m) = text.trim().split_once('-')?;
    if m.len() != 2 {
        return None;
    }
    let year: i32 = y.parse().ok()?;
    let month: u32 = m.parse().ok()?;
    (1..=12).contains(&month).then_some((year, month))
}

/// Parses a CPI file of `YYYY-MM,index` lines with the same comment and
/// header rules as price files.
pub fn parse_cpi(text: &str) -> Result<CpiSeries, SeriesError> {
    let mut entries = BTreeMap::new();
    for (n, (line, content)) in data_lines(text).enumerate() {
        let (month_text, value_text) = content
            .split_once(',')
            .ok_or(SeriesError::MissingField { line, field: 1 })?;
        let value_text = value_text.trim();
        if n == 0 && value_text.parse::<f64>().is_err() {
            continue;
        }
        let ym = parse_year_month(month_text).ok_or_else(|| SeriesError::MalformedMonth {
            line,
            text: month_text.to_string(),
        })?;
        let value = value_text
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| SeriesError::InvalidIndex {
                line,
                text: value_text.to_string(),
            })?;
        if entries.insert(ym, value).is_some() {
            return Err(SeriesError::DuplicateMonth {
                year: ym.0,
                month: ym.1,
            });
        }
    }
    CpiSeries::new(entries)
}
