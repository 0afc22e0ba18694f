//! Published fits shipped as named parameter sets.

use serde::Serialize;

use crate::model::{LpplParams, Regime};

#[derive(Debug, Clone, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub params: LpplParams,
    /// The published form of the fitted curve.
    pub citation: &'static str,
    /// Calendar span of the data the curve was fitted to.
    pub fit_window: (&'static str, &'static str),
    /// Price basis of the fitted data.
    pub price_basis: &'static str,
}

/// Silver, fitted to daily prices from October 2008 to April 2011.
///
/// The published formula prints the critical time as 2011.34 in the power
/// term and 2011.336 in the cosine; the single value 2011.336 is used. The
/// negative oscillation amplitude keeps the `1 + C cos` sign convention.
pub fn silver_2011() -> Preset {
    Preset {
        name: "silver-2011",
        params: LpplParams {
            level: 277.73,
            amplitude: 259.3,
            exponent: 0.032,
            oscillation: -0.0069,
            omega: 4.59,
            phase: 4.237,
            critical_time: 2011.336,
            regime: Regime::Bubble,
        },
        citation: "p(t) = 277.73 - 259.3 (2011.34 - t)^0.032 {1 - 0.0069 cos[4.59 ln(2011.336 - t) + 4.237]}",
        fit_window: ("2008-10-21", "2011-04-19"),
        price_basis: "nominal US dollars per troy ounce",
    }
}

/// Gold, fitted to daily inflation-adjusted prices from November 2003 to
/// May 2011. The phase is kept as published (unwrapped).
pub fn gold_2011() -> Preset {
    Preset {
        name: "gold-2011",
        params: LpplParams {
            level: 1978.2,
            amplitude: 734.8,
            exponent: 0.36,
            oscillation: 0.024,
            omega: 16.5,
            phase: -36.3,
            critical_time: 2011.573,
            regime: Regime::Bubble,
        },
        citation: "p(t) = 1978.2 - 734.8 (2011.573 - t)^0.36 {1 + 0.024 cos[16.5 ln(2011.573 - t) - 36.3]}",
        // The source caption gives November 8 while its text says November 3.
        fit_window: ("2003-11-03", "2011-05-26"),
        price_basis: "inflation adjusted March 2011 US dollars per troy ounce",
    }
}

pub fn all() -> Vec<Preset> {
    vec![silver_2011(), gold_2011()]
}

pub fn by_name(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}
