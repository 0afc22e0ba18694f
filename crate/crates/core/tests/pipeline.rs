use lppl::forecast::critical_window;
use lppl::series::ParseOptions;
use lppl::{
    fit, from_decimal_year, generate, parse_series, presets, profile_tc, FitConfig, NoiseSpec,
};

#[test]
fn silver_generation_size_and_trend() {
    let silver = presets::silver_2011().params;
    let s = generate(&silver, 2008.80, 2011.30, 1, &NoiseSpec::none()).unwrap();
    assert!((910..=915).contains(&s.len()), "{}", s.len());
    let last = s.last().unwrap();
    assert_eq!(last.price, silver.eval(last.t).unwrap());
    assert!(last.price > s.first().unwrap().price);
    // The model peaks at A near t_c; the last sample sits below it.
    assert!(last.price < silver.level);
}

#[test]
fn noiseless_silver_profile_window_contains_the_truth() {
    let silver = presets::silver_2011().params;
    let s = generate(&silver, 2009.5, 2011.30, 2, &NoiseSpec::none()).unwrap();
    let config = FitConfig::bubble(&s);
    let profile = profile_tc(&s, &config).unwrap();
    let w = critical_window(&profile, 0.05).unwrap();
    let lo = w.start;
    let hi = w.end;
    // Profile cells sit on a grid; widen by one cell.
    let cell = chrono::Duration::days((config.critical_time.spacing() * 366.0).ceil() as i64);
    let truth = from_decimal_year(silver.critical_time);
    assert!(
        lo - cell <= truth && truth <= hi + cell,
        "{lo} {hi} {truth}"
    );
}

#[test]
fn price_file_to_gold_window() {
    let gold = presets::gold_2011().params;
    let text = generate(
        &gold,
        2007.0,
        2011.40,
        1,
        &NoiseSpec::multiplicative(0.002, 1),
    )
    .unwrap()
    .to_csv_string();
    let s = parse_series(
        &format!("date,close\n# synthetic gold\n{text}"),
        ParseOptions::default(),
    )
    .unwrap();
    let r = fit(&s, &FitConfig::bubble(&s)).unwrap();
    let point = from_decimal_year(r.params.critical_time);
    let target = chrono::NaiveDate::from_ymd_opt(2011, 7, 27).unwrap();
    assert!((point - target).num_days().abs() <= 4, "{point}");
    assert!(!r.boundary_flags.any());
}
