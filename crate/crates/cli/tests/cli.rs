use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lppl::series::{parse_series, ParseOptions};
use lppl::{presets, to_decimal_year};
use serde_json::Value;

fn lppl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lppl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lppl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const MAY_2011: &str = "\
2011-04-28,48.17,49.52,47.30,48.28
2011-04-29,48.29,49.16,47.58,47.90
2011-05-01,47.94,48.15,42.67,43.72
2011-05-02,43.71,47.35,43.22,44.74
2011-05-03,44.77,45.57,40.60,41.16
2011-05-04,39.03,39.57,34.29,34.32
";

#[test]
fn synth_then_fit_recovers_the_silver_preset() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("silver.csv");
    ok(&[
        "synth",
        "--preset",
        "silver-2011",
        "--from",
        "@2008.80",
        "--to",
        "@2011.30",
        "-o",
        path(&file),
    ]);
    let report = json(&ok(&["fit", path(&file)]));
    let p = &report["params"];
    assert!((p["t_c"].as_f64().unwrap() - 2011.336).abs() < 0.005);
    assert!((p["omega"].as_f64().unwrap() - 4.59).abs() < 0.05);
    assert_eq!(report["schema"], "lppl-report/1");
    assert_eq!(report["converged"], true);
    assert_eq!(report["manifest"]["command"], "fit");
    assert_eq!(
        report["manifest"]["inputs"][0]["sha256"]
            .as_str()
            .unwrap()
            .len(),
        64
    );
    let curve = report["curve"].as_array().unwrap();
    assert_eq!(curve.len(), report["n"].as_u64().unwrap() as usize);
    for row in curve {
        let (o, f) = (
            row["observed"].as_f64().unwrap(),
            row["fitted"].as_f64().unwrap(),
        );
        assert!((o - f).abs() < 1e-6 * o);
    }
    assert!(!report["profile"].as_array().unwrap().is_empty());
    assert!(report["window"]["start"].is_string());

    // The fitted curve is also available as a price file.
    let csv = ok(&["fit", path(&file), "--format", "csv", "--no-profile"]);
    let fitted = parse_series(&csv, ParseOptions::default()).unwrap();
    assert_eq!(fitted.len(), curve.len());
}

#[test]
fn fit_input_errors_exit_with_status_2() {
    let out = lppl(&["fit", "/nonexistent/prices.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));

    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.csv",
        "2011-05-01,43.72\n2011-05-01,44.00\n",
    );
    let out = lppl(&["fit", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));

    assert_eq!(lppl(&["fit"]).status.code(), Some(2));
    assert_eq!(
        lppl(&["eval", "--preset", "copper", "--at", "@2011"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn non_convergence_exits_with_status_1_and_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("gold.csv");
    ok(&[
        "synth",
        "--preset",
        "gold-2011",
        "--from",
        "@2009.0",
        "--to",
        "@2011.3",
        "--step-days",
        "3",
        "-o",
        path(&file),
    ]);
    let report = dir.path().join("report.json");
    let out = lppl(&[
        "fit",
        path(&file),
        "--max-iterations",
        "2",
        "--no-profile",
        "-o",
        path(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&std::fs::read_to_string(report).unwrap());
    assert_eq!(report["converged"], false);
}

#[test]
fn eval_gold_preset_point() {
    let out = ok(&["eval", "--preset", "gold-2011", "--at", "@2011.473"]);
    let rows = json(&out)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 1);
    let price = rows[0]["price"].as_f64().unwrap();
    assert!((price - 1654.0).abs() < 0.05, "{price}");
    assert_eq!(rows[0]["t"].as_f64().unwrap(), 2011.473);
}

#[test]
fn eval_silver_grid_rises() {
    let out = ok(&[
        "eval",
        "--preset",
        "silver-2011",
        "--from",
        "2010-01-01",
        "--to",
        "@2011.30",
        "--format",
        "csv",
    ]);
    let series = parse_series(&out, ParseOptions::default()).unwrap();
    assert!(series.len() > 400);
    let prices = series.prices();
    assert!(prices.windows(2).all(|w| w[1] > w[0]));
    let last = series.last().unwrap();
    assert!(last.t <= 2011.30);
}

#[test]
fn eval_explicit_parameters_and_crossing() {
    let gold = presets::gold_2011().params;
    let set = format!(
        "{},{},{},{},{},{},{}",
        gold.level,
        gold.amplitude,
        gold.exponent,
        gold.oscillation,
        gold.omega,
        gold.phase,
        gold.critical_time
    );
    let a = json(&ok(&["eval", "--set", &set, "--at", "@2011.473"]));
    let b = json(&ok(&["eval", "--preset", "gold-2011", "--at", "@2011.473"]));
    assert_eq!(a["rows"], b["rows"]);

    let out = lppl(&[
        "eval",
        "--preset",
        "gold-2011",
        "--from",
        "@2011.5",
        "--to",
        "@2011.6",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn gold_report(dir: &Path, profile: Value) -> PathBuf {
    let params = serde_json::to_value(presets::gold_2011().params).unwrap();
    let report =
        serde_json::json!({ "schema": "lppl-report/1", "params": params, "profile": profile });
    write(dir, "report.json", &report.to_string())
}

#[test]
fn forecast_point_estimate_without_profile() {
    let dir = tempfile::tempdir().unwrap();
    let report = gold_report(dir.path(), Value::Array(vec![]));
    let rec = json(&ok(&["forecast", path(&report)]));
    let point =
        chrono::NaiveDate::parse_from_str(rec["point"].as_str().unwrap(), "%Y-%m-%d").unwrap();
    let target = chrono::NaiveDate::from_ymd_opt(2011, 7, 27).unwrap();
    assert!((point - target).num_days().abs() <= 2);
    assert!(rec["interval"].is_null());
    assert!(rec["manifest"]["timestamp"].is_string());
}

#[test]
fn forecast_interval_grows_with_slack() {
    let dir = tempfile::tempdir().unwrap();
    let profile: Vec<Value> = (0..21)
        .map(|i| {
            let d = i as f64 - 10.0;
            let lin = serde_json::to_value(presets::gold_2011().params.to_linearized()).unwrap();
            serde_json::json!({
                "t_c": 2011.573 + 0.002 * d,
                "best": { "sse": 100.0 + d * d, "a": 0.36, "omega": 16.5, "linear": lin }
            })
        })
        .collect();
    let report = gold_report(dir.path(), Value::Array(profile));
    let span = |slack: &str| {
        let rec = json(&ok(&["forecast", path(&report), "--slack", slack]));
        let date = |k: &str| {
            chrono::NaiveDate::parse_from_str(rec["interval"][k].as_str().unwrap(), "%Y-%m-%d")
                .unwrap()
        };
        (date("start"), date("end"))
    };
    let narrow = span("0.05");
    let wide = span("0.10");
    assert!(wide.0 <= narrow.0 && narrow.1 <= wide.1);
    assert!(wide != narrow);

    let bad = write(dir.path(), "bad.json", "{\"schema\": 1}");
    assert_eq!(lppl(&["forecast", path(&bad)]).status.code(), Some(2));
}

#[test]
fn verify_may_2011_silver_burst() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "may2011.csv", MAY_2011);
    let rec = json(&ok(&[
        "verify",
        path(&file),
        "--column",
        "4",
        "--window-start",
        "2011-05-01",
        "--threshold",
        "0.15",
        "--horizon",
        "4",
    ]));
    assert_eq!(rec["burst"], true);
    let drop = rec["drawdown"]["drop_fraction"].as_f64().unwrap();
    assert!((drop - (1.0 - 34.32 / 44.74)).abs() < 1e-12);

    let out = lppl(&[
        "verify",
        path(&file),
        "--column",
        "4",
        "--window-start",
        "2011-05-01",
        "--horizon",
        "30",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn verify_rising_series_is_no_burst() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(
        dir.path(),
        "up.csv",
        "2011-05-01,10\n2011-05-02,11\n2011-05-03,12\n",
    );
    let out = lppl(&[
        "verify",
        path(&file),
        "--window-start",
        "2011-05-01",
        "--horizon",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        json(&String::from_utf8(out.stdout).unwrap())["burst"],
        false
    );
}

#[test]
fn synth_gold_round_trips_through_the_price_format() {
    let out = ok(&[
        "synth",
        "--preset",
        "gold-2011",
        "--from",
        "2010-01-01",
        "--to",
        "2011-05-26",
    ]);
    let series = parse_series(&out, ParseOptions::default()).unwrap();
    let gold = presets::gold_2011().params;
    for s in series.samples() {
        assert_eq!(s.price, gold.eval(s.t).unwrap());
    }
    assert_eq!(
        series.first().unwrap().t,
        to_decimal_year(chrono::NaiveDate::from_ymd_opt(2010, 1, 1).unwrap())
    );
}

#[test]
fn synth_is_byte_reproducible() {
    let args = [
        "synth",
        "--preset",
        "silver-2011",
        "--from",
        "@2010.0",
        "--to",
        "@2011.0",
        "--noise",
        "multiplicative",
        "--sigma",
        "0.01",
        "--seed",
        "9",
    ];
    assert_eq!(ok(&args), ok(&args));
    let mut other = args;
    other[12] = "10";
    assert_ne!(ok(&args), ok(&other));
}

#[test]
fn synth_noise_has_the_requested_scale() {
    let out = ok(&[
        "synth",
        "--preset",
        "silver-2011",
        "--from",
        "@2009.0",
        "--to",
        "@2011.3",
        "--noise",
        "multiplicative",
        "--sigma",
        "0.01",
    ]);
    let series = parse_series(&out, ParseOptions::default()).unwrap();
    assert!(series.len() >= 500);
    let silver = presets::silver_2011().params;
    let dev: Vec<f64> = series
        .samples()
        .iter()
        .map(|s| s.price / silver.eval(s.t).unwrap() - 1.0)
        .collect();
    let mean = dev.iter().sum::<f64>() / dev.len() as f64;
    let sd = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (dev.len() - 1) as f64).sqrt();
    assert!((sd - 0.01).abs() < 0.3 * 0.01, "{sd}");
}

#[test]
fn synth_rejects_windows_across_the_critical_time() {
    let out = lppl(&[
        "synth",
        "--preset",
        "silver-2011",
        "--from",
        "@2011.0",
        "--to",
        "@2011.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

const PRICES: &str = "2011-01-14,10\n2011-02-14,20\n2011-03-14,30\n";

#[test]
fn deflate_constant_cpi_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write(dir.path(), "p.csv", PRICES);
    let cpi = write(
        dir.path(),
        "cpi.csv",
        "month,index\n2011-01,220\n2011-02,220\n2011-03,220\n",
    );
    let out = ok(&[
        "deflate",
        path(&prices),
        "--cpi",
        path(&cpi),
        "--reference",
        "2011-03",
    ]);
    let a = parse_series(&out, ParseOptions::default()).unwrap();
    let b = parse_series(PRICES, ParseOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn deflate_by_halved_reference() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write(dir.path(), "p.csv", PRICES);
    let cpi = write(
        dir.path(),
        "cpi.csv",
        "2010-12,110\n2011-01,220\n2011-02,220\n2011-03,220\n",
    );
    let out = ok(&[
        "deflate",
        path(&prices),
        "--cpi",
        path(&cpi),
        "--reference",
        "2010-12",
    ]);
    let prices: Vec<f64> = parse_series(&out, ParseOptions::default())
        .unwrap()
        .prices();
    assert_eq!(prices, vec![5.0, 10.0, 15.0]);
}

#[test]
fn deflate_mixed_months_rowwise() {
    let dir = tempfile::tempdir().unwrap();
    let prices = write(dir.path(), "p.csv", PRICES);
    let cpi = write(
        dir.path(),
        "cpi.csv",
        "# index\n2011-01,200\n2011-02,210\n2011-03,225\n",
    );
    let out = ok(&[
        "deflate",
        path(&prices),
        "--cpi",
        path(&cpi),
        "--reference",
        "2011-03",
    ]);
    assert!(out.starts_with("# lppl deflate"));
    let got = parse_series(&out, ParseOptions::default())
        .unwrap()
        .prices();
    let want = [10.0 * 225.0 / 200.0, 20.0 * 225.0 / 210.0, 30.0];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-12 * w);
    }

    let out = lppl(&[
        "deflate",
        path(&prices),
        "--cpi",
        path(&cpi),
        "--reference",
        "2012-01",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
