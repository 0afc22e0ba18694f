//! Least-squares estimation of the model.
//!
//! For fixed `(t_c, a, ω)` the model is linear in `(A, B, C1, C2)`, which is
//! solved exactly by Householder QR. The remaining three dimensions are
//! searched on a grid, and the best cells are polished with a bounded
//! Nelder-Mead simplex that re-solves the linear subproblem at every probe.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lstsq::{self, System};
use crate::model::{LinearizedParams, LpplParams, ModelError, Regime, MIN_TAU};
use crate::series::PriceSeries;
use crate::simplex::{self, SimplexOptions};

/// One day in decimal years, as used for default search ranges.
pub const DAY: f64 = 1.0 / 365.25;

/// The linear subproblem has four unknowns.
pub const MIN_LINEAR_SAMPLES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("{n} samples are too few (need at least {min})")]
    TooFewSamples { n: usize, min: usize },
    #[error("rank-deficient design matrix (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no grid candidate is valid: the critical-time range overlaps the data or every design is degenerate")]
    AllCandidatesInvalid,
    #[error(
        "critical-time range [{min}, {max}] must lie entirely before the first sample at {first}"
    )]
    RangeNotBeforeData { min: f64, max: f64, first: f64 },
}

/// An inclusive, evenly spaced search axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    /// An axis pinned to one value.
    pub fn fixed(value: f64) -> Self {
        Self::new(value, value, 1)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// The `i`-th grid value. A single-point axis sits at its midpoint.
    pub fn value(&self, i: usize) -> f64 {
        if self.count <= 1 {
            self.min + 0.5 * self.width()
        } else if i + 1 == self.count {
            self.max
        } else {
            self.min + self.width() * i as f64 / (self.count - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }

    /// Grid spacing, or the full width for a single-point axis.
    pub fn spacing(&self) -> f64 {
        if self.count <= 1 {
            self.width()
        } else {
            self.width() / (self.count - 1) as f64
        }
    }

    fn to_unit(self, x: f64) -> f64 {
        if self.width() > 0.0 {
            (x - self.min) / self.width()
        } else {
            0.0
        }
    }

    fn from_unit(self, u: f64) -> f64 {
        if self.width() > 0.0 {
            if u >= 1.0 {
                self.max
            } else {
                self.min + u * self.width()
            }
        } else {
            self.min
        }
    }

    fn validate(&self, name: &str) -> Result<(), FitError> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(FitError::InvalidConfig(format!(
                "{name} range is not finite"
            )));
        }
        if self.min > self.max {
            return Err(FitError::InvalidConfig(format!(
                "{name} range [{}, {}] is empty",
                self.min, self.max
            )));
        }
        if self.count == 0 {
            return Err(FitError::InvalidConfig(format!(
                "{name} grid count must be at least 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub critical_time: GridAxis,
    pub exponent: GridAxis,
    pub omega: GridAxis,
    /// Number of best grid cells polished by the simplex.
    pub refine_top_k: usize,
    /// Simplex size tolerance in coordinates scaled to the unit box.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub regime: Regime,
    /// Seeds the jitter of the initial simplex edges.
    pub seed: u64,
    pub min_samples: usize,
    /// Evaluate grid cells and refinements on the rayon pool.
    pub parallel: bool,
}

impl FitConfig {
    /// Defaults for a bubble fit: critical time searched from one day to one
    /// year after the last sample.
    pub fn bubble(series: &PriceSeries) -> Self {
        let last = series.last().map_or(0.0, |s| s.t);
        Self::with_critical_range(GridAxis::new(last + DAY, last + 1.0, 60), Regime::Bubble)
    }

    /// Defaults for an antibubble fit: critical time searched from one year
    /// to one day before the first sample.
    pub fn antibubble(series: &PriceSeries) -> Self {
        let first = series.first().map_or(0.0, |s| s.t);
        Self::with_critical_range(
            GridAxis::new(first - 1.0, first - DAY, 60),
            Regime::Antibubble,
        )
    }

    pub fn with_critical_range(critical_time: GridAxis, regime: Regime) -> Self {
        Self {
            critical_time,
            exponent: GridAxis::new(0.01, 0.99, 25),
            omega: GridAxis::new(2.0, 25.0, 40),
            refine_top_k: 10,
            tolerance: 1e-8,
            max_iterations: 2000,
            regime,
            seed: 0,
            min_samples: 20,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        self.critical_time.validate("critical time")?;
        self.exponent.validate("exponent")?;
        self.omega.validate("omega")?;
        if !(self.exponent.min > 0.0 && self.exponent.max < 1.0) {
            return Err(FitError::InvalidConfig(
                "exponent range must lie within (0, 1)".into(),
            ));
        }
        if self.omega.min <= 0.0 {
            return Err(FitError::InvalidConfig(
                "omega range must be positive".into(),
            ));
        }
        if self.refine_top_k == 0 {
            return Err(FitError::InvalidConfig(
                "refine_top_k must be at least 1".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(FitError::InvalidConfig("tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_cells(&self) -> usize {
        self.critical_time.count * self.exponent.count * self.omega.count
    }
}

/// Cells of the grid stage kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub t_c: f64,
    pub a: f64,
    pub omega: f64,
    pub sse: f64,
}

/// Conditions that make a fitted solution suspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundaryFlags {
    pub critical_time: bool,
    pub exponent: bool,
    pub omega: bool,
    /// The power coefficient has the wrong sign, so `m <= 0`.
    pub non_bubble_shape: bool,
    /// `|C| >= 1`.
    pub oscillation_overflow: bool,
}

impl BoundaryFlags {
    pub fn any(&self) -> bool {
        self.critical_time
            || self.exponent
            || self.omega
            || self.non_bubble_shape
            || self.oscillation_overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: LpplParams,
    pub linear: LinearizedParams,
    pub sse: f64,
    pub rmse: f64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    pub grid_evaluations: usize,
    pub top_candidates: Vec<Candidate>,
    pub boundary_flags: BoundaryFlags,
}

impl FitResult {
    pub(crate) fn assemble(
        mut linear: LinearizedParams,
        sse: f64,
        n: usize,
        config: &FitConfig,
        point: [f64; 3],
    ) -> Self {
        linear.critical_time = point[0];
        let params = LpplParams::from_linearized_lenient(&linear);
        let near_edge = |axis: GridAxis, x: f64| {
            axis.width() > 0.0 && {
                let u = axis.to_unit(x);
                u < 1e-6 || u > 1.0 - 1e-6
            }
        };
        let boundary_flags = BoundaryFlags {
            critical_time: near_edge(config.critical_time, point[0]),
            exponent: near_edge(config.exponent, point[1]),
            omega: near_edge(config.omega, point[2]),
            non_bubble_shape: !linear.is_bubble_shaped(),
            oscillation_overflow: !(params.oscillation.abs() < 1.0),
        };
        Self {
            params,
            linear,
            sse,
            rmse: (sse / n as f64).sqrt(),
            n,
            converged: true,
            iterations: 0,
            grid_evaluations: 0,
            top_candidates: Vec::new(),
            boundary_flags,
        }
    }
}

/// Series times re-centered on their midpoint, which evaluates every `τ`
/// from small numbers instead of raw decimal years.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    origin: f64,
    times: Vec<f64>,
    prices: Vec<f64>,
}

impl Prepared {
    pub fn new(series: &PriceSeries) -> Self {
        let origin = match (series.first(), series.last()) {
            (Some(a), Some(b)) => 0.5 * (a.t + b.t),
            _ => 0.0,
        };
        Self {
            origin,
            times: series.samples().iter().map(|s| s.t - origin).collect(),
            prices: series.prices(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }
}

/// Evaluates the linear subproblem with the per-`t_c` and per-`a` work
/// cached across the inner loops.
pub(crate) struct CellSolver<'a> {
    data: &'a Prepared,
    regime: Regime,
    ln_tau: Vec<f64>,
    power: Vec<f64>,
    system: System,
    tc_ok: bool,
}

impl<'a> CellSolver<'a> {
    pub fn new(data: &'a Prepared, regime: Regime) -> Self {
        let n = data.len();
        Self {
            data,
            regime,
            ln_tau: vec![0.0; n],
            power: vec![0.0; n],
            system: System::new(n),
            tc_ok: false,
        }
    }

    /// Returns the first offending time when some `τ` is below the guard.
    pub fn set_critical_time(&mut self, critical_time: f64) -> Result<(), f64> {
        let tc = critical_time - self.data.origin;
        self.tc_ok = false;
        for (l, &t) in self.ln_tau.iter_mut().zip(&self.data.times) {
            let tau = self.regime.tau(tc, t);
            if !(tau >= MIN_TAU) {
                return Err(t + self.data.origin);
            }
            *l = tau.ln();
        }
        self.tc_ok = true;
        Ok(())
    }

    pub fn set_exponent(&mut self, exponent: f64) {
        for (p, l) in self.power.iter_mut().zip(&self.ln_tau) {
            *p = (exponent * l).exp();
        }
    }

    pub fn solve(&mut self, omega: f64) -> Result<lstsq::Solution, f64> {
        debug_assert!(self.tc_ok);
        let [c0, c1, c2, c3, rhs] = self.system.columns_mut();
        for i in 0..c0.len() {
            let p = self.power[i];
            let (s, c) = (omega * self.ln_tau[i]).sin_cos();
            c0[i] = 1.0;
            c1[i] = p;
            c2[i] = p * c;
            c3[i] = p * s;
        }
        rhs.copy_from_slice(&self.data.prices);
        self.system.solve()
    }

    /// Objective value; invalid points score `+inf`.
    pub fn sse_at(&mut self, critical_time: f64, exponent: f64, omega: f64) -> f64 {
        if self.set_critical_time(critical_time).is_err() {
            return f64::INFINITY;
        }
        self.set_exponent(exponent);
        self.solve(omega).map_or(f64::INFINITY, |s| s.sse)
    }

    pub fn linearized(
        &self,
        sol: &lstsq::Solution,
        critical_time: f64,
        exponent: f64,
        omega: f64,
    ) -> LinearizedParams {
        LinearizedParams {
            level: sol.coef[0],
            power: sol.coef[1],
            cos_coef: sol.coef[2],
            sin_coef: sol.coef[3],
            critical_time,
            exponent,
            omega,
            regime: self.regime,
        }
    }
}

/// Exact least-squares solution of the linear coefficients for a fixed
/// nonlinear trio, with its sum of squared residuals.
pub fn fit_linear(
    series: &PriceSeries,
    critical_time: f64,
    exponent: f64,
    omega: f64,
    regime: Regime,
) -> Result<(LinearizedParams, f64), FitError> {
    if series.len() < MIN_LINEAR_SAMPLES {
        return Err(FitError::TooFewSamples {
            n: series.len(),
            min: MIN_LINEAR_SAMPLES,
        });
    }
    let data = Prepared::new(series);
    let mut solver = CellSolver::new(&data, regime);
    solver
        .set_critical_time(critical_time)
        .map_err(|t| ModelError::Singular {
            t,
            t_c: critical_time,
            tau: regime.tau(critical_time, t),
        })?;
    solver.set_exponent(exponent);
    let sol = solver
        .solve(omega)
        .map_err(|condition| FitError::RankDeficient { condition })?;
    Ok((
        solver.linearized(&sol, critical_time, exponent, omega),
        sol.sse,
    ))
}

/// Total order used everywhere a best candidate is chosen: lower sse, then
/// earlier `t_c`, then smaller `ω`, then smaller `a`.
pub(crate) fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.sse
        .total_cmp(&b.sse)
        .then(a.t_c.total_cmp(&b.t_c))
        .then(a.omega.total_cmp(&b.omega))
        .then(a.a.total_cmp(&b.a))
}

pub(crate) fn par_map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Every valid grid cell, grouped by critical-time index in grid order.
fn grid_stage(data: &Prepared, config: &FitConfig) -> Vec<Vec<Candidate>> {
    let tcs = config.critical_time.values();
    let exponents = config.exponent.values();
    let omegas = config.omega.values();
    par_map(&tcs, config.parallel, |&t_c| {
        let mut solver = CellSolver::new(data, config.regime);
        let mut cells = Vec::new();
        if solver.set_critical_time(t_c).is_err() {
            return cells;
        }
        for &a in &exponents {
            solver.set_exponent(a);
            for &omega in &omegas {
                if let Ok(sol) = solver.solve(omega) {
                    if sol.sse.is_finite() {
                        cells.push(Candidate {
                            t_c,
                            a,
                            omega,
                            sse: sol.sse,
                        });
                    }
                }
            }
        }
        cells
    })
}

struct Refined {
    point: [f64; 3],
    sse: f64,
    iterations: usize,
    converged: bool,
}

/// Polishes one start point. `free` marks which of `(t_c, a, ω)` move.
fn refine(
    data: &Prepared,
    config: &FitConfig,
    start: &Candidate,
    free: [bool; 3],
    jitter_stream: u64,
) -> Refined {
    let axes = [config.critical_time, config.exponent, config.omega];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(jitter_stream);
    let start_point = [start.t_c, start.a, start.omega];

    let dims: Vec<usize> = (0..3)
        .filter(|&k| free[k] && axes[k].width() > 0.0)
        .collect();
    let x0: Vec<f64> = dims
        .iter()
        .map(|&k| axes[k].to_unit(start_point[k]))
        .collect();
    let steps: Vec<f64> = dims
        .iter()
        .map(|&k| {
            let cell = axes[k].spacing() / axes[k].width();
            0.5 * cell * (1.0 + rng.random_range(-0.25..0.25))
        })
        .collect();
    let lo = vec![0.0; dims.len()];
    let hi = vec![1.0; dims.len()];

    let to_point = |u: &[f64]| {
        let mut p = start_point;
        for (&k, &v) in dims.iter().zip(u) {
            p[k] = axes[k].from_unit(v);
        }
        p
    };
    let mut solver = CellSolver::new(data, config.regime);
    let result = simplex::minimize(
        |u| {
            let p = to_point(u);
            solver.sse_at(p[0], p[1], p[2])
        },
        &x0,
        &steps,
        &lo,
        &hi,
        SimplexOptions {
            tolerance: config.tolerance,
            max_iterations: config.max_iterations,
            restarts: 2,
        },
    );
    let point = to_point(&result.x);
    // The simplex keeps its start vertex, but that vertex is the unit-box
    // image of the grid cell; never report worse than the cell itself.
    if result.f <= start.sse {
        Refined {
            point,
            sse: result.f,
            iterations: result.iterations,
            converged: result.converged,
        }
    } else {
        Refined {
            point: start_point,
            sse: start.sse,
            iterations: result.iterations,
            converged: result.converged,
        }
    }
}

fn check_series(series: &PriceSeries, config: &FitConfig) -> Result<(), FitError> {
    config.validate()?;
    let min = config.min_samples.max(MIN_LINEAR_SAMPLES);
    if series.len() < min {
        return Err(FitError::TooFewSamples {
            n: series.len(),
            min,
        });
    }
    Ok(())
}

fn solve_point(
    data: &Prepared,
    config: &FitConfig,
    point: [f64; 3],
) -> Result<(LinearizedParams, f64), FitError> {
    let mut solver = CellSolver::new(data, config.regime);
    solver
        .set_critical_time(point[0])
        .map_err(|_| FitError::AllCandidatesInvalid)?;
    solver.set_exponent(point[1]);
    let sol = solver
        .solve(point[2])
        .map_err(|condition| FitError::RankDeficient { condition })?;
    Ok((
        solver.linearized(&sol, point[0], point[1], point[2]),
        sol.sse,
    ))
}

/// Fits the model in the configured regime: full grid over `(t_c, a, ω)`,
/// then simplex refinement from the `refine_top_k` best cells.
pub fn fit(series: &PriceSeries, config: &FitConfig) -> Result<FitResult, FitError> {
    check_series(series, config)?;
    let data = Prepared::new(series);
    let mut cells: Vec<Candidate> = grid_stage(&data, config).into_iter().flatten().collect();
    if cells.is_empty() {
        return Err(FitError::AllCandidatesInvalid);
    }
    cells.sort_by(candidate_order);
    cells.truncate(config.refine_top_k);

    let indexed: Vec<(usize, Candidate)> = cells.iter().copied().enumerate().collect();
    let refined = par_map(&indexed, config.parallel, |(rank, start)| {
        refine(&data, config, start, [true; 3], *rank as u64)
    });
    let best = refined
        .iter()
        .min_by(|x, y| {
            let cx = Candidate {
                t_c: x.point[0],
                a: x.point[1],
                omega: x.point[2],
                sse: x.sse,
            };
            let cy = Candidate {
                t_c: y.point[0],
                a: y.point[1],
                omega: y.point[2],
                sse: y.sse,
            };
            candidate_order(&cx, &cy)
        })
        .expect("at least one refined candidate");

    let (linear, sse) = solve_point(&data, config, best.point)?;
    let mut result = FitResult::assemble(linear, sse, data.len(), config, best.point);
    result.converged = best.converged;
    result.iterations = best.iterations;
    result.grid_evaluations = config.grid_cells();
    result.top_candidates = cells;
    Ok(result)
}

/// Antibubble fit. The critical-time range must end before the first
/// sample.
pub fn fit_antibubble(series: &PriceSeries, config: &FitConfig) -> Result<FitResult, FitError> {
    let config = FitConfig {
        regime: Regime::Antibubble,
        ..*config
    };
    config.validate()?;
    if let Some(first) = series.first() {
        if config.critical_time.max >= first.t {
            return Err(FitError::RangeNotBeforeData {
                min: config.critical_time.min,
                max: config.critical_time.max,
                first: first.t,
            });
        }
    }
    fit(series, &config)
}

/// Best fit at one critical time, the other two nonlinear parameters
/// optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    pub sse: f64,
    pub a: f64,
    pub omega: f64,
    pub linear: LinearizedParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t_c: f64,
    /// `None` when no cell at this critical time is valid.
    pub best: Option<ProfileFit>,
}

impl ProfilePoint {
    pub fn sse(&self) -> f64 {
        self.best.map_or(f64::INFINITY, |b| b.sse)
    }
}

/// Profile of the objective over the critical-time grid: for each grid
/// `t_c`, the best `(a, ω)` cell refined with `t_c` held fixed.
pub fn profile_tc(series: &PriceSeries, config: &FitConfig) -> Result<Vec<ProfilePoint>, FitError> {
    check_series(series, config)?;
    let data = Prepared::new(series);
    let per_tc = grid_stage(&data, config);
    if per_tc.iter().all(Vec::is_empty) {
        return Err(FitError::AllCandidatesInvalid);
    }
    let tcs: Vec<(usize, f64, Option<Candidate>)> = config
        .critical_time
        .values()
        .into_iter()
        .zip(&per_tc)
        .enumerate()
        .map(|(i, (tc, cells))| (i, tc, cells.iter().copied().min_by(candidate_order)))
        .collect();
    Ok(par_map(&tcs, config.parallel, |&(i, t_c, start)| {
        let best = start.and_then(|start| {
            let r = refine(&data, config, &start, [false, true, true], i as u64);
            let (linear, sse) = solve_point(&data, config, r.point).ok()?;
            Some(ProfileFit {
                sse,
                a: r.point[1],
                omega: r.point[2],
                linear,
            })
        });
        ProfilePoint { t_c, best }
    }))
}
