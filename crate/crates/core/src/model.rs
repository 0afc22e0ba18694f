//! The log-periodic power law
//!
//! ```text
//! p(t) = A - m τ^a {1 + C cos[ω ln τ + φ]},   τ = t_c - t      (bubble)
//! p(t) = A + m τ^a {1 + C cos[ω ln τ + φ]},   τ = t - t_c      (antibubble)
//! ```
//!
//! and its linear rewriting
//!
//! ```text
//! p = A + B τ^a + C1 τ^a cos(ω ln τ) + C2 τ^a sin(ω ln τ)
//! ```
//!
//! with `B = -m`, `C1 = -m C cos φ`, `C2 = m C sin φ` for bubbles (all signs
//! flipped for antibubbles).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::PriceSeries;

/// Smallest admissible distance to the critical time, in years.
pub const MIN_TAU: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("t = {t} is at or beyond the critical time {t_c} (tau = {tau:e})")]
    Singular { t: f64, t_c: f64, tau: f64 },
    #[error("linear solution is not bubble shaped: power coefficient {power} has the wrong sign")]
    NonBubbleShape { power: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Growth toward the critical time, `τ = t_c - t`.
    #[default]
    Bubble,
    /// Decline after the critical time, `τ = t - t_c`.
    Antibubble,
}

impl Regime {
    /// Distance to the critical time on this regime's valid side.
    #[inline]
    pub fn tau(self, critical_time: f64, t: f64) -> f64 {
        match self {
            Regime::Bubble => critical_time - t,
            Regime::Antibubble => t - critical_time,
        }
    }

    /// Sign of the power-law term: `p = A + sign * m * τ^a * (...)`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Regime::Bubble => -1.0,
            Regime::Antibubble => 1.0,
        }
    }

    /// `dτ / dt_c`.
    #[inline]
    fn dtau_dtc(self) -> f64 {
        match self {
            Regime::Bubble => 1.0,
            Regime::Antibubble => -1.0,
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Bubble => "bubble",
            Regime::Antibubble => "antibubble",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bubble" => Ok(Regime::Bubble),
            "antibubble" => Ok(Regime::Antibubble),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

fn checked_tau(regime: Regime, critical_time: f64, t: f64) -> Result<f64, ModelError> {
    let tau = regime.tau(critical_time, t);
    if tau >= MIN_TAU {
        Ok(tau)
    } else {
        Err(ModelError::Singular {
            t,
            t_c: critical_time,
            tau,
        })
    }
}

/// The seven constants of the model plus its regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpplParams {
    /// Price level reached at the critical time.
    #[serde(rename = "A")]
    pub level: f64,
    /// Power-law amplitude, `m`.
    #[serde(rename = "m")]
    pub amplitude: f64,
    /// Power-law exponent, `a`.
    #[serde(rename = "a")]
    pub exponent: f64,
    /// Relative amplitude of the log-periodic oscillation, `C`.
    #[serde(rename = "C")]
    pub oscillation: f64,
    /// Log-frequency, `ω`.
    pub omega: f64,
    /// Phase, `φ`.
    #[serde(rename = "phi")]
    pub phase: f64,
    /// Critical time in decimal years, `t_c`.
    #[serde(rename = "t_c")]
    pub critical_time: f64,
    pub regime: Regime,
}

impl LpplParams {
    /// Checks the structural invariants: all fields finite, `0 < a < 1`,
    /// `|C| < 1`, `m >= 0` and `ω > 0`.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            self.level,
            self.amplitude,
            self.exponent,
            self.oscillation,
            self.omega,
            self.phase,
            self.critical_time,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParams("non-finite field".into()));
        }
        if !(self.exponent > 0.0 && self.exponent < 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "exponent {} outside (0, 1)",
                self.exponent
            )));
        }
        if self.oscillation.abs() >= 1.0 {
            return Err(ModelError::InvalidParams(format!(
                "oscillation amplitude |{}| >= 1",
                self.oscillation
            )));
        }
        if self.amplitude < 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "negative amplitude {}",
                self.amplitude
            )));
        }
        if self.omega <= 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "non-positive log-frequency {}",
                self.omega
            )));
        }
        Ok(())
    }

    pub fn tau(&self, t: f64) -> Result<f64, ModelError> {
        checked_tau(self.regime, self.critical_time, t)
    }

    /// Model price at `t`.
    pub fn eval(&self, t: f64) -> Result<f64, ModelError> {
        let tau = self.tau(t)?;
        Ok(self.eval_tau(tau))
    }

    #[inline]
    fn eval_tau(&self, tau: f64) -> f64 {
        let ln_tau = tau.ln();
        let power = (self.exponent * ln_tau).exp();
        let wave = 1.0 + self.oscillation * (self.omega * ln_tau + self.phase).cos();
        self.level + self.regime.sign() * self.amplitude * power * wave
    }

    pub fn eval_series(&self, times: &[f64]) -> Result<Vec<f64>, ModelError> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    /// `observed - model` for every sample, in series order.
    pub fn residuals(&self, series: &PriceSeries) -> Result<Vec<f64>, ModelError> {
        series
            .samples()
            .iter()
            .map(|s| Ok(s.price - self.eval(s.t)?))
            .collect()
    }

    pub fn sse(&self, series: &PriceSeries) -> Result<f64, ModelError> {
        Ok(self.residuals(series)?.iter().map(|r| r * r).sum())
    }

    /// Analytic gradient of [`sse`](Self::sse) with respect to
    /// `(A, m, a, C, ω, φ, t_c)`.
    pub fn gradient_sse(&self, series: &PriceSeries) -> Result<[f64; 7], ModelError> {
        let sign = self.regime.sign();
        let m = self.amplitude;
        let c = self.oscillation;
        let mut grad = [0.0; 7];
        for s in series.samples() {
            let tau = self.tau(s.t)?;
            let ln_tau = tau.ln();
            let power = (self.exponent * ln_tau).exp();
            let (sin_th, cos_th) = (self.omega * ln_tau + self.phase).sin_cos();
            let wave = 1.0 + c * cos_th;
            let r = s.price - (self.level + sign * m * power * wave);

            // Partial derivatives of the model price.
            let d_level = 1.0;
            let d_amplitude = sign * power * wave;
            let d_exponent = sign * m * power * ln_tau * wave;
            let d_oscillation = sign * m * power * cos_th;
            let d_phase = -sign * m * power * c * sin_th;
            let d_omega = d_phase * ln_tau;
            let d_tau = sign * m * power / tau * (self.exponent * wave - c * self.omega * sin_th);
            let d_tc = d_tau * self.regime.dtau_dtc();

            let partials = [
                d_level,
                d_amplitude,
                d_exponent,
                d_oscillation,
                d_omega,
                d_phase,
                d_tc,
            ];
            for (g, p) in grad.iter_mut().zip(partials) {
                *g -= 2.0 * r * p;
            }
        }
        Ok(grad)
    }

    pub fn to_linearized(&self) -> LinearizedParams {
        let flip = -self.regime.sign();
        let mc = self.amplitude * self.oscillation;
        let (sin_phi, cos_phi) = self.phase.sin_cos();
        LinearizedParams {
            level: self.level,
            power: -flip * self.amplitude,
            cos_coef: -flip * mc * cos_phi,
            sin_coef: flip * mc * sin_phi,
            critical_time: self.critical_time,
            exponent: self.exponent,
            omega: self.omega,
            regime: self.regime,
        }
    }

    /// Inverse of [`to_linearized`](Self::to_linearized). Requires the power
    /// coefficient to have bubble sign (`m > 0`) unless the oscillation terms
    /// vanish; the phase comes back in `(-π, π]`.
    pub fn from_linearized(lin: &LinearizedParams) -> Result<Self, ModelError> {
        let amplitude = lin.amplitude();
        let has_wave = lin.cos_coef != 0.0 || lin.sin_coef != 0.0;
        if amplitude <= 0.0 && (has_wave || amplitude < 0.0) {
            return Err(ModelError::NonBubbleShape { power: lin.power });
        }
        Ok(Self::from_linearized_lenient(lin))
    }

    /// Like [`from_linearized`](Self::from_linearized) but never fails: a
    /// wrong-signed power coefficient yields a negative `m`, and a zero one
    /// with nonzero oscillation terms yields an infinite `C`.
    pub fn from_linearized_lenient(lin: &LinearizedParams) -> Self {
        let amplitude = lin.amplitude();
        let flip = -lin.regime.sign();
        let radius = lin.cos_coef.hypot(lin.sin_coef);
        let (oscillation, phase) = if radius == 0.0 {
            (0.0, 0.0)
        } else {
            // m C cos φ = -flip C1 and m C sin φ = flip C2, with C >= 0 when m > 0.
            let s = flip * amplitude.signum();
            let phase = wrap_phase((s * lin.sin_coef).atan2(-s * lin.cos_coef));
            (radius / amplitude.abs(), phase)
        };
        Self {
            level: lin.level,
            amplitude,
            exponent: lin.exponent,
            oscillation,
            omega: lin.omega,
            phase,
            critical_time: lin.critical_time,
            regime: lin.regime,
        }
    }
}

/// Maps an angle into `(-π, π]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Linear coefficients `(A, B, C1, C2)` together with the nonlinear trio
/// they were solved for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizedParams {
    #[serde(rename = "A")]
    pub level: f64,
    #[serde(rename = "B")]
    pub power: f64,
    #[serde(rename = "C1")]
    pub cos_coef: f64,
    #[serde(rename = "C2")]
    pub sin_coef: f64,
    #[serde(rename = "t_c")]
    pub critical_time: f64,
    #[serde(rename = "a")]
    pub exponent: f64,
    pub omega: f64,
    pub regime: Regime,
}

impl LinearizedParams {
    /// `m` implied by the power coefficient.
    pub fn amplitude(&self) -> f64 {
        self.regime.sign() * self.power
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.level, self.power, self.cos_coef, self.sin_coef]
    }

    /// True when the power coefficient has the sign of a rising bubble
    /// (or a declining antibubble).
    pub fn is_bubble_shaped(&self) -> bool {
        self.amplitude() > 0.0
    }

    pub fn eval(&self, t: f64) -> Result<f64, ModelError> {
        let row = design_row(
            checked_tau(self.regime, self.critical_time, t)?,
            self.exponent,
            self.omega,
        );
        Ok(row
            .iter()
            .zip(self.coefficients())
            .map(|(x, b)| x * b)
            .sum())
    }
}

#[inline]
pub(crate) fn design_row(tau: f64, exponent: f64, omega: f64) -> [f64; 4] {
    let ln_tau = tau.ln();
    let power = (exponent * ln_tau).exp();
    let (s, c) = (omega * ln_tau).sin_cos();
    [1.0, power, power * c, power * s]
}

/// The four basis columns `[1, τ^a, τ^a cos(ω ln τ), τ^a sin(ω ln τ)]`
/// evaluated at each time.
pub fn design_columns(
    critical_time: f64,
    exponent: f64,
    omega: f64,
    regime: Regime,
    times: &[f64],
) -> Result<[Vec<f64>; 4], ModelError> {
    let mut cols: [Vec<f64>; 4] = Default::default();
    for c in cols.iter_mut() {
        c.reserve(times.len());
    }
    for &t in times {
        let row = design_row(checked_tau(regime, critical_time, t)?, exponent, omega);
        for (c, x) in cols.iter_mut().zip(row) {
            c.push(x);
        }
    }
    Ok(cols)
}
