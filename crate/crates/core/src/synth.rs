//! Synthetic series from known parameters, a brute-force reference fitter,
//! and noise-robustness experiments.

use chrono::Duration;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{
    self, candidate_order, par_map, Candidate, FitConfig, FitError, FitResult, GridAxis,
};
use crate::model::{LpplParams, ModelError, Regime};
use crate::series::{from_decimal_year, to_decimal_year, PriceSeries, Sample};

/// Redraws allowed per sample before a nonpositive noisy price is an error.
pub const MAX_REDRAWS: usize = 1000;

/// Default cap on `grid cells x samples` for [`oracle_fit`].
pub const DEFAULT_ORACLE_BUDGET: usize = 2_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("step must be at least one day")]
    InvalidStep,
    #[error("window [{start}, {end}] is empty")]
    EmptyWindow { start: f64, end: f64 },
    #[error("window crosses the critical time: {0}")]
    CrossesCritical(ModelError),
    #[error("nonpositive price at t = {t} after {MAX_REDRAWS} redraws")]
    NonPositivePrice { t: f64 },
    #[error("oracle grid of {cells} cells over {n} samples exceeds the budget of {budget}")]
    BudgetExceeded {
        cells: usize,
        n: usize,
        budget: usize,
    },
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    Additive,
    Multiplicative,
}

impl std::str::FromStr for NoiseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "additive" => Ok(Self::Additive),
            "multiplicative" => Ok(Self::Multiplicative),
            other => Err(format!("unknown noise kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Currency units for additive noise, a fraction for multiplicative.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn multiplicative(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Multiplicative,
            sigma,
            seed,
        }
    }

    pub fn additive(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Additive,
            sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(SynthError::InvalidNoise(format!(
                "sigma {} must be finite and >= 0",
                self.sigma
            )));
        }
        if self.kind == NoiseKind::None && self.sigma != 0.0 {
            return Err(SynthError::InvalidNoise(
                "noise kind `none` requires sigma = 0".into(),
            ));
        }
        Ok(())
    }

    fn is_silent(&self) -> bool {
        self.kind == NoiseKind::None || self.sigma == 0.0
    }
}

/// Samples `params` on calendar days from the first day at or after
/// `t_start` through `t_end`, every `step_days` days, then applies noise.
pub fn generate(
    params: &LpplParams,
    t_start: f64,
    t_end: f64,
    step_days: u32,
    noise: &NoiseSpec,
) -> Result<PriceSeries, SynthError> {
    noise.validate()?;
    if step_days == 0 {
        return Err(SynthError::InvalidStep);
    }
    if !(t_start <= t_end) {
        return Err(SynthError::EmptyWindow {
            start: t_start,
            end: t_end,
        });
    }
    let mut day = from_decimal_year(t_start);
    if to_decimal_year(day) < t_start {
        day += Duration::days(1);
    }
    let mut times = Vec::new();
    while to_decimal_year(day) <= t_end {
        times.push(to_decimal_year(day));
        day += Duration::days(step_days as i64);
    }
    let clean = params
        .eval_series(&times)
        .map_err(SynthError::CrossesCritical)?;

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut samples = Vec::with_capacity(times.len());
    for (&t, &value) in times.iter().zip(&clean) {
        let price = if noise.is_silent() {
            value
        } else {
            let mut redraws = 0;
            loop {
                let e = normal.sample(&mut rng);
                let p = match noise.kind {
                    NoiseKind::Additive => value + e,
                    NoiseKind::Multiplicative => value * (1.0 + e),
                    NoiseKind::None => value,
                };
                if p > 0.0 {
                    break p;
                }
                redraws += 1;
                if redraws >= MAX_REDRAWS {
                    return Err(SynthError::NonPositivePrice { t });
                }
            }
        };
        if !(price > 0.0 && price.is_finite()) {
            return Err(SynthError::NonPositivePrice { t });
        }
        samples.push(Sample { t, price });
    }
    Ok(PriceSeries::new(samples).expect("increasing calendar days"))
}

/// Dense grid for [`oracle_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub critical_time: GridAxis,
    pub exponent: GridAxis,
    pub omega: GridAxis,
    /// Upper bound on `cells x samples`.
    pub budget: usize,
}

impl OracleGrid {
    pub fn new(critical_time: GridAxis, exponent: GridAxis, omega: GridAxis) -> Self {
        Self {
            critical_time,
            exponent,
            omega,
            budget: DEFAULT_ORACLE_BUDGET,
        }
    }

    fn axes(&self) -> [GridAxis; 3] {
        [self.critical_time, self.exponent, self.omega]
    }

    fn cells(&self) -> usize {
        self.axes().iter().map(|a| a.count).product()
    }
}

/// Reference fitter: exhaustive conditional-linear solves over a dense grid
/// followed by one pass at half spacing around the best cell.
pub fn oracle_fit(
    series: &PriceSeries,
    grid: &OracleGrid,
    regime: Regime,
) -> Result<FitResult, SynthError> {
    let axes = grid.axes();
    let halving_cells = axes
        .iter()
        .map(|a| if a.count > 1 { 5 } else { 1 })
        .product::<usize>();
    let cells = grid.cells() + halving_cells;
    if cells.saturating_mul(series.len()) > grid.budget {
        return Err(SynthError::BudgetExceeded {
            cells,
            n: series.len(),
            budget: grid.budget,
        });
    }
    let evaluate = |t_c: f64, a: f64, omega: f64| {
        fit::fit_linear(series, t_c, a, omega, regime)
            .ok()
            .filter(|(_, sse)| sse.is_finite())
            .map(|(_, sse)| Candidate { t_c, a, omega, sse })
    };

    let mut best: Option<Candidate> = None;
    let keep = |c: Option<Candidate>, best: &mut Option<Candidate>| {
        if let Some(c) = c {
            if best.is_none_or(|b| candidate_order(&c, &b).is_lt()) {
                *best = Some(c);
            }
        }
    };
    for t_c in axes[0].values() {
        for a in axes[1].values() {
            for omega in axes[2].values() {
                keep(evaluate(t_c, a, omega), &mut best);
            }
        }
    }
    let grid_best = best.ok_or(FitError::AllCandidatesInvalid)?;

    let offsets = |axis: GridAxis, center: f64| -> Vec<f64> {
        if axis.count <= 1 {
            return vec![center];
        }
        let half = 0.5 * axis.spacing();
        (-2..=2)
            .map(|k| center + k as f64 * half)
            .filter(|v| *v >= axis.min && *v <= axis.max)
            .collect()
    };
    for t_c in offsets(axes[0], grid_best.t_c) {
        for a in offsets(axes[1], grid_best.a) {
            for omega in offsets(axes[2], grid_best.omega) {
                keep(evaluate(t_c, a, omega), &mut best);
            }
        }
    }
    let best = best.expect("grid best retained");
    let (linear, sse) = fit::fit_linear(series, best.t_c, best.a, best.omega, regime)?;
    let config = FitConfig {
        exponent: axes[1],
        omega: axes[2],
        ..FitConfig::with_critical_range(axes[0], regime)
    };
    let mut result = FitResult::assemble(
        linear,
        sse,
        series.len(),
        &config,
        [best.t_c, best.a, best.omega],
    );
    result.grid_evaluations = cells;
    result.top_candidates = vec![best];
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub sigma: f64,
    pub median_abs_tc_error: f64,
    pub iqr_abs_tc_error: f64,
    pub failures: usize,
    pub repetitions: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Window and sampling of a recovery experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub t_start: f64,
    pub t_end: f64,
    pub step_days: u32,
    pub noise: NoiseKind,
    /// Repetition `i` uses noise seed `seed + i`.
    pub seed: u64,
}

/// For each noise level, generates `repetitions` noisy series, fits each
/// with `config`, and summarizes the absolute critical-time errors. Failed
/// generations or fits are counted, not propagated.
pub fn recovery_experiment(
    params: &LpplParams,
    design: &Design,
    levels: &[f64],
    repetitions: usize,
    config: &FitConfig,
) -> Result<Vec<RecoveryRow>, SynthError> {
    if repetitions == 0 {
        return Err(SynthError::NoRepetitions);
    }
    let run = |sigma: f64, rep: usize| -> Option<f64> {
        let noise = if sigma == 0.0 {
            NoiseSpec::none()
        } else {
            NoiseSpec {
                kind: design.noise,
                sigma,
                seed: design.seed.wrapping_add(rep as u64),
            }
        };
        let series = generate(
            params,
            design.t_start,
            design.t_end,
            design.step_days,
            &noise,
        )
        .ok()?;
        let result = fit::fit(&series, config).ok()?;
        Some((result.params.critical_time - params.critical_time).abs())
    };

    let mut rows = Vec::with_capacity(levels.len());
    for &sigma in levels {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(SynthError::InvalidNoise(format!(
                "sigma {sigma} must be finite and >= 0"
            )));
        }
        // Noiseless repetitions are identical; fit once.
        let outcomes: Vec<Option<f64>> = if sigma == 0.0 {
            vec![run(0.0, 0); repetitions]
        } else {
            let reps: Vec<usize> = (0..repetitions).collect();
            par_map(&reps, config.parallel, |&i| run(sigma, i))
        };
        let mut errors: Vec<f64> = outcomes.iter().flatten().copied().collect();
        errors.sort_by(f64::total_cmp);
        rows.push(RecoveryRow {
            sigma,
            median_abs_tc_error: quantile(&errors, 0.5),
            iqr_abs_tc_error: quantile(&errors, 0.75) - quantile(&errors, 0.25),
            failures: repetitions - errors.len(),
            repetitions,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn noiseless_generation_matches_eval() {
        let silver = presets::silver_2011().params;
        let s = generate(&silver, 2008.80, 2011.30, 1, &NoiseSpec::none()).unwrap();
        assert!((910..=915).contains(&s.len()), "{}", s.len());
        for smp in s.samples() {
            assert_eq!(smp.price, silver.eval(smp.t).unwrap());
        }
        assert!(s.first().unwrap().t >= 2008.80 && s.last().unwrap().t <= 2011.30);
        assert!(silver.residuals(&s).unwrap().iter().all(|&r| r == 0.0));
        let last = s.last().unwrap().price;
        assert!(last < 48.28 && last > s.first().unwrap().price, "{last}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let gold = presets::gold_2011().params;
        let noise = NoiseSpec::multiplicative(0.01, 42);
        let a = generate(&gold, 2009.0, 2011.0, 1, &noise).unwrap();
        let b = generate(&gold, 2009.0, 2011.0, 1, &noise).unwrap();
        assert_eq!(a, b);
        let c = generate(
            &gold,
            2009.0,
            2011.0,
            1,
            &NoiseSpec::multiplicative(0.01, 43),
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn multiplicative_noise_has_the_requested_scale() {
        let gold = presets::gold_2011().params;
        let s = generate(
            &gold,
            2008.0,
            2011.0,
            1,
            &NoiseSpec::multiplicative(0.01, 7),
        )
        .unwrap();
        let rel: Vec<f64> = s
            .samples()
            .iter()
            .map(|x| x.price / gold.eval(x.t).unwrap() - 1.0)
            .collect();
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        let sd =
            (rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rel.len() - 1) as f64).sqrt();
        assert!((sd - 0.01).abs() < 0.001, "{sd}");
    }

    #[test]
    fn generation_errors() {
        let silver = presets::silver_2011().params;
        assert!(matches!(
            generate(&silver, 2010.0, 2011.5, 1, &NoiseSpec::none()),
            Err(SynthError::CrossesCritical(_))
        ));
        assert!(matches!(
            generate(&silver, 2010.0, 2011.0, 0, &NoiseSpec::none()),
            Err(SynthError::InvalidStep)
        ));
        assert!(matches!(
            generate(
                &silver,
                2010.0,
                2011.0,
                1,
                &NoiseSpec {
                    kind: NoiseKind::None,
                    sigma: 0.1,
                    seed: 0
                }
            ),
            Err(SynthError::InvalidNoise(_))
        ));
        assert!(matches!(
            generate(&silver, 2010.0, 2011.0, 1, &NoiseSpec::additive(-1.0, 0)),
            Err(SynthError::InvalidNoise(_))
        ));
    }

    #[test]
    fn weekly_steps() {
        let gold = presets::gold_2011().params;
        let s = generate(&gold, 2010.0, 2011.0, 7, &NoiseSpec::none()).unwrap();
        assert_eq!(s.len(), 53);
    }

    fn small_instance() -> (LpplParams, PriceSeries) {
        let p = LpplParams {
            level: 120.0,
            amplitude: 60.0,
            exponent: 0.45,
            oscillation: 0.05,
            omega: 7.3,
            phase: 1.1,
            critical_time: 2011.2,
            regime: Regime::Bubble,
        };
        let s = generate(&p, 2009.0, 2011.0, 7, &NoiseSpec::none()).unwrap();
        (p, s)
    }

    #[test]
    fn single_cell_oracle_equals_fit_linear() {
        let (p, s) = small_instance();
        let grid = OracleGrid::new(
            GridAxis::fixed(p.critical_time),
            GridAxis::fixed(p.exponent),
            GridAxis::fixed(p.omega),
        );
        let r = oracle_fit(&s, &grid, Regime::Bubble).unwrap();
        let (lin, sse) =
            fit::fit_linear(&s, p.critical_time, p.exponent, p.omega, Regime::Bubble).unwrap();
        assert_eq!(r.linear, lin);
        assert_eq!(r.sse, sse);
    }

    #[test]
    fn nested_grids_never_lose() {
        let (_, s) = small_instance();
        let last = s.last().unwrap().t;
        let grid = |k: usize| {
            OracleGrid::new(
                GridAxis::new(last + 0.01, last + 0.5, 4 * k + 1),
                GridAxis::new(0.1, 0.9, 4 * k + 1),
                GridAxis::new(3.0, 12.0, 4 * k + 1),
            )
        };
        // Counts 5, 9, 17: each grid contains the previous one and its
        // half-spacing neighbourhood.
        let sse: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&k| oracle_fit(&s, &grid(k), Regime::Bubble).unwrap().sse)
            .collect();
        assert!(sse[1] <= sse[0] && sse[2] <= sse[1], "{sse:?}");
    }

    #[test]
    fn oracle_budget_is_enforced() {
        let (_, s) = small_instance();
        let grid = OracleGrid {
            budget: 1000,
            ..OracleGrid::new(
                GridAxis::new(2011.1, 2011.3, 10),
                GridAxis::new(0.1, 0.9, 10),
                GridAxis::new(3.0, 9.0, 10),
            )
        };
        assert!(matches!(
            oracle_fit(&s, &grid, Regime::Bubble),
            Err(SynthError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn excluding_the_truth_is_strictly_worse() {
        let (p, s) = small_instance();
        let last = s.last().unwrap().t;
        let inclusive = FitConfig {
            critical_time: GridAxis::new(last + 0.01, last + 0.5, 12),
            exponent: GridAxis::new(0.1, 0.9, 9),
            omega: GridAxis::new(3.0, 12.0, 10),
            refine_top_k: 4,
            ..FitConfig::bubble(&s)
        };
        let fitted = fit::fit(&s, &inclusive).unwrap();
        let excluded = OracleGrid::new(
            GridAxis::new(last + 0.01, last + 0.5, 12),
            GridAxis::new(0.1, 0.9, 17),
            GridAxis::new(p.omega + 1.5, 14.0, 20),
        );
        let oracle = oracle_fit(&s, &excluded, Regime::Bubble).unwrap();
        assert!(oracle.sse > fitted.sse);
    }

    #[test]
    fn recovery_table_shape() {
        let (p, s) = small_instance();
        let last = s.last().unwrap().t;
        let config = FitConfig {
            critical_time: GridAxis::new(last + 0.01, last + 0.5, 12),
            exponent: GridAxis::new(0.1, 0.9, 9),
            omega: GridAxis::new(3.0, 12.0, 10),
            refine_top_k: 3,
            ..FitConfig::bubble(&s)
        };
        let design = Design {
            t_start: 2009.0,
            t_end: 2011.0,
            step_days: 7,
            noise: NoiseKind::Multiplicative,
            seed: 0,
        };
        let rows = recovery_experiment(&p, &design, &[0.0, 0.01], 1, &config).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].failures, 0);
        assert!(rows[0].median_abs_tc_error < 0.005);
        assert_eq!(rows[1].repetitions, 1);
        assert_eq!(rows[1].iqr_abs_tc_error, 0.0);
        assert!(matches!(
            recovery_experiment(&p, &design, &[0.0], 0, &config),
            Err(SynthError::NoRepetitions)
        ));

        // A window crossing the critical time fails every repetition.
        let crossing = Design {
            t_end: 2011.5,
            ..design
        };
        let rows = recovery_experiment(&p, &crossing, &[0.01], 3, &config).unwrap();
        assert_eq!(rows[0].failures, 3);
        assert!(rows[0].median_abs_tc_error.is_nan());
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
