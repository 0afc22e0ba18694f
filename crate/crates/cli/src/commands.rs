use std::fmt::Display;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use lppl::fit::{
    BoundaryFlags, Candidate, FitConfig, FitError, GridAxis, ProfileFit, ProfilePoint,
};
use lppl::forecast::{
    critical_window, verify_burst, BurstVerification, CriticalWindow, ForecastError,
};
use lppl::model::{LinearizedParams, LpplParams, Regime};
use lppl::presets;
use lppl::series::{
    from_decimal_year, parse_cpi, parse_series, DuplicatePolicy, ParseOptions, PriceSeries,
};
use lppl::synth::{generate, NoiseSpec, SynthError};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{InputDigest, RunManifest, SCHEMA};
use crate::{
    DeflateArgs, EvalArgs, FitArgs, ForecastArgs, Format, Global, InputArgs, ParamsArgs, SynthArgs,
    VerifyArgs,
};

/// Exit status and diagnostic of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn computation(message: impl Display) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn fit_failure(e: FitError) -> Failure {
    match e {
        FitError::InvalidConfig(_)
        | FitError::TooFewSamples { .. }
        | FitError::RangeNotBeforeData { .. } => usage(e),
        _ => computation(e),
    }
}

fn read_text(path: &Path) -> Result<(String, InputDigest), Failure> {
    let bytes =
        std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let digest = InputDigest::of(path, &bytes);
    let text =
        String::from_utf8(bytes).map_err(|_| usage(format!("{} is not UTF-8", path.display())))?;
    Ok((text, digest))
}

fn load_series(args: &InputArgs) -> Result<(PriceSeries, InputDigest), Failure> {
    let (text, digest) = read_text(&args.input)?;
    let options = ParseOptions {
        duplicates: if args.keep_last {
            DuplicatePolicy::Last
        } else {
            DuplicatePolicy::Reject
        },
        price_field: args.column,
    };
    let series = parse_series(&text, options)
        .map_err(|e| usage(format!("{}: {e}", args.input.display())))?;
    Ok((series, digest))
}

fn emit(global: &Global, text: &str) -> Result<(), Failure> {
    match &global.output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Row {
    date: NaiveDate,
    t: f64,
    price: f64,
}

fn rows(series: &PriceSeries) -> Vec<Row> {
    series
        .samples()
        .iter()
        .map(|s| Row {
            date: from_decimal_year(s.t),
            t: s.t,
            price: s.price,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: f64,
    pub date: NaiveDate,
    pub observed: f64,
    pub fitted: f64,
}

#[derive(Debug, Clone, Serialize)]
struct FitReport {
    schema: &'static str,
    manifest: RunManifest,
    config: FitConfig,
    params: LpplParams,
    linear: LinearizedParams,
    sse: f64,
    rmse: f64,
    n: usize,
    converged: bool,
    iterations: usize,
    grid_evaluations: usize,
    boundary_flags: BoundaryFlags,
    top_candidates: Vec<Candidate>,
    window: Option<CriticalWindow>,
    profile: Vec<ProfilePoint>,
    curve: Vec<CurveRow>,
}

fn axis(default: GridAxis, min: Option<f64>, max: Option<f64>, count: Option<usize>) -> GridAxis {
    GridAxis::new(
        min.unwrap_or(default.min),
        max.unwrap_or(default.max),
        count.unwrap_or(default.count),
    )
}

fn fit_config(args: &FitArgs, series: &PriceSeries, global: &Global) -> FitConfig {
    let mut c = match args.regime {
        Regime::Bubble => FitConfig::bubble(series),
        Regime::Antibubble => FitConfig::antibubble(series),
    };
    c.critical_time = axis(
        c.critical_time,
        args.tc_min.map(|t| t.0),
        args.tc_max.map(|t| t.0),
        args.tc_count,
    );
    c.exponent = axis(c.exponent, args.a_min, args.a_max, args.a_count);
    c.omega = axis(c.omega, args.omega_min, args.omega_max, args.omega_count);
    c.refine_top_k = args.top_k.unwrap_or(c.refine_top_k);
    c.tolerance = args.tolerance.unwrap_or(c.tolerance);
    c.max_iterations = args.max_iterations.unwrap_or(c.max_iterations);
    c.min_samples = args.min_samples.unwrap_or(c.min_samples);
    c.seed = global.seed;
    c
}

fn check_slack(slack: f64) -> Result<(), Failure> {
    if slack > 0.0 && slack.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--slack must be positive, got {slack}")))
    }
}

pub fn fit(args: &FitArgs, global: &Global) -> Result<(), Failure> {
    check_slack(args.slack)?;
    let (mut series, digest) = load_series(&args.input)?;
    let mut inputs = vec![digest];
    if let (Some(path), Some(reference)) = (&args.cpi, args.reference) {
        let (text, digest) = read_text(path)?;
        inputs.push(digest);
        let cpi = parse_cpi(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        series = series.deflate(&cpi, reference.0).map_err(usage)?;
    }
    let from = args.from.map_or(f64::NEG_INFINITY, |t| t.0);
    let to = args.to.map_or(f64::INFINITY, |t| t.0);
    series = series.window(from, to).map_err(usage)?;

    let config = fit_config(args, &series, global);
    let result = match args.regime {
        Regime::Bubble => lppl::fit(&series, &config),
        Regime::Antibubble => lppl::fit_antibubble(&series, &config),
    }
    .map_err(fit_failure)?;

    let (profile, window) = if args.no_profile {
        (Vec::new(), None)
    } else {
        let mut profile = lppl::profile_tc(&series, &config).map_err(fit_failure)?;
        // The refined optimum is itself a profile point, and usually the
        // lowest one.
        let refined = ProfilePoint {
            t_c: result.params.critical_time,
            best: Some(ProfileFit {
                sse: result.sse,
                a: result.params.exponent,
                omega: result.params.omega,
                linear: result.linear,
            }),
        };
        let at = profile.partition_point(|p| p.t_c < refined.t_c);
        profile.insert(at, refined);
        let window = critical_window(&profile, args.slack).ok();
        (profile, window)
    };

    let curve = series
        .samples()
        .iter()
        .map(|s| CurveRow {
            t: s.t,
            date: from_decimal_year(s.t),
            observed: s.price,
            fitted: result.linear.eval(s.t).unwrap_or(f64::NAN),
        })
        .collect::<Vec<_>>();

    let manifest = RunManifest::new(
        "fit",
        json!({ "args": args, "fit": config, "seed": global.seed }),
        inputs,
    );
    let text = match global.format.unwrap_or(Format::Report) {
        Format::Report => to_json(&FitReport {
            schema: SCHEMA,
            manifest,
            config,
            params: result.params,
            linear: result.linear,
            sse: result.sse,
            rmse: result.rmse,
            n: result.n,
            converged: result.converged,
            iterations: result.iterations,
            grid_evaluations: result.grid_evaluations,
            boundary_flags: result.boundary_flags,
            top_candidates: result.top_candidates.clone(),
            window,
            profile,
            curve,
        }),
        Format::Csv => {
            let mut out = manifest.csv_header();
            out.push_str("date,fitted,observed,t\n");
            for r in &curve {
                let _ = writeln!(out, "{},{},{},{}", r.date, r.fitted, r.observed, r.t);
            }
            out
        }
    };
    emit(global, &text)?;

    let p = &result.params;
    let mut line = format!(
        "fit: t_c = {:.4} ({}), a = {:.4}, omega = {:.4}, rmse = {:.4e}, n = {}",
        p.critical_time,
        from_decimal_year(p.critical_time),
        p.exponent,
        p.omega,
        result.rmse,
        result.n
    );
    if let Some(w) = window {
        let _ = write!(line, ", window {} .. {}", w.start, w.end);
    }
    if result.boundary_flags.any() {
        let _ = write!(line, ", boundary flags {:?}", result.boundary_flags);
    }
    eprintln!("{line}");
    if !result.converged {
        return Err(computation(
            "the simplex did not converge; the report was still written",
        ));
    }
    Ok(())
}

fn resolve_params(
    args: &ParamsArgs,
    regime: Regime,
) -> Result<(LpplParams, Vec<InputDigest>), Failure> {
    let (params, inputs) = if let Some(name) = &args.preset {
        let preset = presets::by_name(name).ok_or_else(|| {
            let names: Vec<_> = presets::all().iter().map(|p| p.name).collect();
            usage(format!(
                "unknown preset `{name}`; known: {}",
                names.join(", ")
            ))
        })?;
        (preset.params, Vec::new())
    } else if let Some(path) = &args.params {
        let (text, digest) = read_text(path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let value = value.get("params").cloned().unwrap_or(value);
        let params =
            serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        (params, vec![digest])
    } else if let Some(list) = &args.set {
        let v = list
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| usage(format!("--set: {e}")))?;
        let [level, amplitude, exponent, oscillation, omega, phase, critical_time] = v[..] else {
            return Err(usage(format!(
                "--set expects 7 values A,m,a,C,omega,phi,t_c; got {}",
                v.len()
            )));
        };
        let params = LpplParams {
            level,
            amplitude,
            exponent,
            oscillation,
            omega,
            phase,
            critical_time,
            regime,
        };
        (params, Vec::new())
    } else {
        return Err(usage("one of --preset, --params or --set is required"));
    };
    params.validate().map_err(usage)?;
    Ok((params, inputs))
}

#[derive(Debug, Clone, Serialize)]
struct RowsReport<'a> {
    schema: &'static str,
    manifest: RunManifest,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<&'a LpplParams>,
    rows: Vec<Row>,
}

fn rows_output(
    global: &Global,
    default: Format,
    manifest: RunManifest,
    params: Option<&LpplParams>,
    rows: Vec<Row>,
    with_t: bool,
) -> Result<(), Failure> {
    let text = match global.format.unwrap_or(default) {
        Format::Report => to_json(&RowsReport {
            schema: SCHEMA,
            manifest,
            params,
            rows,
        }),
        Format::Csv => {
            let mut out = manifest.csv_header();
            if with_t {
                out.push_str("date,price,t\n");
            }
            for r in &rows {
                if with_t {
                    let _ = writeln!(out, "{},{},{}", r.date, r.price, r.t);
                } else {
                    let _ = writeln!(out, "{},{}", r.date, r.price);
                }
            }
            out
        }
    };
    emit(global, &text)
}

pub fn eval(args: &EvalArgs, global: &Global) -> Result<(), Failure> {
    let (params, inputs) = resolve_params(&args.params, args.regime)?;
    let mut out = Vec::new();
    for t in &args.at {
        let price = params.eval(t.0).map_err(usage)?;
        out.push(Row {
            date: from_decimal_year(t.0),
            t: t.0,
            price,
        });
    }
    if let (Some(from), Some(to)) = (args.from, args.to) {
        let grid =
            generate(&params, from.0, to.0, args.step_days, &NoiseSpec::none()).map_err(usage)?;
        out.extend(rows(&grid));
    }
    if out.is_empty() {
        return Err(usage("no evaluation times: give --at or --from/--to"));
    }
    eprintln!("eval: {} rows", out.len());
    let manifest = RunManifest::new("eval", json!({ "args": args, "params": params }), inputs);
    rows_output(global, Format::Report, manifest, Some(&params), out, true)
}

#[derive(Debug, Deserialize)]
struct ReportView {
    params: LpplParams,
    #[serde(default)]
    profile: Vec<ProfilePoint>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Interval {
    start: NaiveDate,
    end: NaiveDate,
}

#[derive(Debug, Clone, Serialize)]
struct ForecastRecord {
    schema: &'static str,
    manifest: RunManifest,
    t_c: f64,
    point: NaiveDate,
    /// Absent when the report carries no profile.
    interval: Option<Interval>,
    slack: f64,
}

pub fn forecast(args: &ForecastArgs, global: &Global) -> Result<(), Failure> {
    check_slack(args.slack)?;
    let (text, digest) = read_text(&args.report)?;
    let report: ReportView = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: not a fit report: {e}", args.report.display())))?;
    let (t_c, interval) = match critical_window(&report.profile, args.slack) {
        Ok(w) => (
            w.t_c,
            Some(Interval {
                start: w.start,
                end: w.end,
            }),
        ),
        Err(ForecastError::EmptyProfile) => (report.params.critical_time, None),
        Err(e) => return Err(usage(e)),
    };
    let point = from_decimal_year(t_c);
    match interval {
        Some(i) => eprintln!(
            "critical time {t_c:.4}: {point}, window {} .. {} (slack {})",
            i.start, i.end, args.slack
        ),
        None => eprintln!("critical time {t_c:.4}: {point}, window absent (report has no profile)"),
    }
    let manifest = RunManifest::new("forecast", json!({ "args": args }), vec![digest]);
    emit(
        global,
        &to_json(&ForecastRecord {
            schema: SCHEMA,
            manifest,
            t_c,
            point,
            interval,
            slack: args.slack,
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
struct VerifyRecord {
    schema: &'static str,
    manifest: RunManifest,
    #[serde(flatten)]
    verification: BurstVerification,
}

pub fn verify(args: &VerifyArgs, global: &Global) -> Result<(), Failure> {
    if !(args.threshold.is_finite() && (0.0..=1.0).contains(&args.threshold)) {
        return Err(usage(format!(
            "--threshold must lie in [0, 1], got {}",
            args.threshold
        )));
    }
    let (series, digest) = load_series(&args.input)?;
    let window = CriticalWindow::on(args.window_start);
    let v = verify_burst(&series, &window, args.threshold, args.horizon).map_err(usage)?;
    let d = &v.drawdown;
    eprintln!(
        "burst: {}; drop {:.4} from {} ({}) to {} ({}) within {} days of {}",
        if v.burst { "yes" } else { "no" },
        d.drop_fraction,
        d.peak.price,
        d.peak.date,
        d.trough.price,
        d.trough.date,
        args.horizon,
        args.window_start
    );
    let manifest = RunManifest::new("verify", json!({ "args": args }), vec![digest]);
    emit(
        global,
        &to_json(&VerifyRecord {
            schema: SCHEMA,
            manifest,
            verification: v,
        }),
    )
}

pub fn synth(args: &SynthArgs, global: &Global) -> Result<(), Failure> {
    let (params, inputs) = resolve_params(&args.params, args.regime)?;
    let noise = NoiseSpec {
        kind: args.noise.into(),
        sigma: args.sigma,
        seed: global.seed,
    };
    let series =
        generate(&params, args.from.0, args.to.0, args.step_days, &noise).map_err(|e| match e {
            SynthError::NonPositivePrice { .. } => computation(e),
            _ => usage(e),
        })?;
    eprintln!("synth: {} samples", series.len());
    let manifest = RunManifest::new(
        "synth",
        json!({ "args": args, "params": params, "noise": noise }),
        inputs,
    );
    rows_output(
        global,
        Format::Csv,
        manifest,
        Some(&params),
        rows(&series),
        false,
    )
}

pub fn deflate(args: &DeflateArgs, global: &Global) -> Result<(), Failure> {
    let (series, digest) = load_series(&args.input)?;
    let (text, cpi_digest) = read_text(&args.cpi)?;
    let cpi = parse_cpi(&text).map_err(|e| usage(format!("{}: {e}", args.cpi.display())))?;
    let deflated = series.deflate(&cpi, args.reference.0).map_err(usage)?;
    let (y, m) = args.reference.0;
    eprintln!("deflate: {} samples in {y}-{m:02} money", deflated.len());
    let manifest = RunManifest::new("deflate", json!({ "args": args }), vec![digest, cpi_digest]);
    rows_output(global, Format::Csv, manifest, None, rows(&deflated), false)
}
