//! Log-periodic power-law (LPPL) fitting for commodity price series.
//!
//! The crate fits
//!
//! ```text
//! p(t) = A - m (t_c - t)^a {1 + C cos[ω ln(t_c - t) + φ]}
//! ```
//!
//! to a daily price series, reports the critical time `t_c` as a calendar
//! window, and checks realized drawdowns after the window opens.
//!
//! * [`series`]: price files, decimal years, CPI deflation.
//! * [`model`]: evaluation, residuals, gradient and the linear rewriting.
//! * [`fit`]: grid search with an exact linear subproblem and simplex polish.
//! * [`forecast`]: critical windows, drawdowns and burst checks.
//! * [`synth`]: synthetic data, a brute-force reference fitter, recovery
//!   experiments.
//! * [`presets`]: published parameter sets.

pub mod fit;
pub mod forecast;
mod lstsq;
pub mod model;
pub mod presets;
pub mod series;
mod simplex;
pub mod synth;

pub use fit::{
    fit, fit_antibubble, fit_linear, profile_tc, FitConfig, FitError, FitResult, GridAxis,
    ProfilePoint,
};
pub use forecast::{critical_window, drawdown, verify_burst, CriticalWindow, DrawdownReport};
pub use model::{design_columns, LinearizedParams, LpplParams, ModelError, Regime};
pub use series::{
    from_decimal_year, parse_series, to_decimal_year, CalendarDate, CpiSeries, PriceSeries, Sample,
};
pub use synth::{generate, oracle_fit, recovery_experiment, NoiseKind, NoiseSpec};
