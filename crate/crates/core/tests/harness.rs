use std::f64::consts::TAU;

use geoflow_core::harness::*;
use geoflow_core::metrics::DEFAULT_ALPHA;
use geoflow_core::sections::{build_return_map_grid, GridSpec, ReturnMap, SectionSpec};
use geoflow_core::{DualMetric, Error, IntegratorConfig, RotationalProfile};

fn ids(report: &RunReport) -> Vec<String> {
    report.checks.iter().map(|c| c.id.clone()).collect()
}

#[test]
fn round_sphere_baseline_passes() {
    let run = run_scenario("round-sphere-baseline", &Overrides::default()).unwrap();
    assert!(run.report.pass, "{:#?}", run.report.checks);
    let planned: Vec<String> = planned_checks(&run.report.scenario)
        .unwrap()
        .into_iter()
        .flat_map(|s| s.checks)
        .collect();
    assert_eq!(ids(&run.report), planned);
    let mut sorted = planned.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), planned.len());
}

#[test]
fn unknown_scenario() {
    assert_eq!(
        run_scenario("nonexistent", &Overrides::default()).unwrap_err(),
        Error::UnknownScenario("nonexistent".into())
    );
}

#[test]
fn every_scenario_has_a_plan() {
    for name in SCENARIOS {
        let s = Scenario::defaults(name).unwrap();
        s.validate().unwrap();
        let plan = planned_checks(&s).unwrap();
        assert!(
            !plan.is_empty() && plan.iter().all(|p| !p.checks.is_empty()),
            "{name}"
        );
    }
}

#[test]
fn config_errors_carry_the_offending_path() {
    let err = |sets: &[&str]| {
        let o = Overrides {
            sets: sets.iter().map(|s| s.to_string()).collect(),
            ..Overrides::default()
        };
        resolve_scenario("katok-sphere", &o).unwrap_err()
    };
    match err(&["integrator.rel_tol=\"tight\""]) {
        Error::ConfigInvalid { path, .. } => assert_eq!(path, "integrator.rel_tol"),
        e => panic!("{e:?}"),
    }
    match err(&["metric.bogus=1"]) {
        Error::ConfigInvalid { path, message } => {
            assert!(path.starts_with("metric"), "{path}");
            assert!(message.contains("bogus"), "{message}");
        }
        e => panic!("{e:?}"),
    }
    match err(&["analysis.grid.identity_tol=-1"]) {
        Error::ConfigInvalid { path, .. } => assert_eq!(path, "analysis.grid.identity_tol"),
        e => panic!("{e:?}"),
    }
    assert!(matches!(
        err(&["no-equals-sign"]),
        Error::ConfigInvalid { .. }
    ));
    assert!(
        matches!(err(&["scenario.name=katok-torus"]), Error::ConfigInvalid { path, .. } if path == "scenario.name")
    );
}

#[test]
fn config_file_and_sets_layer_over_defaults() {
    let o = Overrides {
        config: Some(serde_json::json!({
            "analysis": {"grid": {"ns": 4}},
            "section": {"max_return_time": 20.0}
        })),
        sets: vec![
            "analysis.grid.nu=3".into(),
            "analysis.division.xs.1=0.25".into(),
        ],
        seed: Some(11),
    };
    let s = resolve_scenario("round-sphere-baseline", &o).unwrap();
    assert_eq!((s.analysis.grid.ns, s.analysis.grid.nu), (4, 3));
    assert_eq!(s.section.max_return_time, 20.0);
    assert_eq!(s.analysis.division.xs[1], 0.25);
    assert_eq!(s.scenario.seed, 11);
    // untouched keys keep their defaults
    assert_eq!(s.analysis.grid.tau_tol, 1e-6);

    // switching the profile kind replaces the whole object
    let o = Overrides::default().set(r#"profile={"kind":"spliced","L":4.0,"eps":0.25}"#);
    let s = resolve_scenario("katok-sphere", &o).unwrap();
    assert_eq!(s.profile.period(), Some(4.0));
    let back = Overrides {
        config: Some(serde_json::json!({"profile": {"kind": "round-sphere"}})),
        ..Overrides::default()
    };
    let s = resolve_scenario("katok-torus", &back).unwrap();
    assert_eq!(s.profile, RotationalProfile::RoundSphere);
}

#[test]
fn config_file_loads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    std::fs::write(&p, r#"{"scenario": {"name": "katok-torus", "seed": 3}}"#).unwrap();
    let o = Overrides {
        config: Some(load_config_file(&p).unwrap()),
        ..Overrides::default()
    };
    assert_eq!(
        resolve_scenario("katok-torus", &o).unwrap().scenario.seed,
        3
    );
    std::fs::write(&p, "{ not json").unwrap();
    assert!(matches!(
        load_config_file(&p),
        Err(Error::ConfigInvalid { .. })
    ));
}

/// Katok sphere with the expensive stages cut down to a few orbits.
fn light_katok_sphere() -> Overrides {
    Overrides::default()
        .set("analysis.iterates.iterates=5")
        .set("analysis.entropy.cloud=1000")
        .set("analysis.entropy.times=[0,1,2,3]")
        .set("analysis.entropy.eps=[1.5]")
        .set("analysis.conservation.orbits=1")
}

#[test]
fn alpha_override_is_echoed_and_regated() {
    let alpha = 0.030901699437494747;
    let run = run_scenario(
        "katok-sphere",
        &light_katok_sphere().set(format!("metric.alpha={alpha}")),
    )
    .unwrap();
    assert_eq!(run.report.scenario.metric.alpha, alpha);
    let gate = run.report.check("convexity-gate").unwrap();
    assert!(gate.pass);
    assert!(gate.detail.as_deref().unwrap().contains(&alpha.to_string()));
    assert!(run.report.check("axioms-katok").unwrap().pass);

    let big = run_scenario("katok-sphere", &light_katok_sphere().set("metric.alpha=50")).unwrap();
    assert!(!big.report.pass);
    assert!(!big.report.check("convexity-gate").unwrap().pass);
    let downstream = big.report.check("commuting-flows").unwrap();
    assert!(!downstream.pass);
    assert!(downstream
        .detail
        .as_deref()
        .unwrap()
        .starts_with("convexity-lost"));
    assert_eq!(ids(&big.report), ids(&run.report));
}

#[test]
fn reruns_are_byte_identical_and_laid_out_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_scenario("round-sphere-baseline", &Overrides::with_seed(7)).unwrap();
    let b = run_scenario("round-sphere-baseline", &Overrides::with_seed(7)).unwrap();
    let da = write_run(&a, dir.path()).unwrap();
    let db = write_run(&b, dir.path()).unwrap();
    assert_ne!(da, db);
    let ja = std::fs::read(da.join(REPORT_FILE)).unwrap();
    assert_eq!(ja, std::fs::read(db.join(REPORT_FILE)).unwrap());
    for f in &a.report.artifacts {
        assert!(da.join(f).is_file(), "{f}");
    }
    let latest = dir.path().join("round-sphere-baseline").join("latest");
    assert_eq!(
        std::fs::canonicalize(&latest).unwrap(),
        std::fs::canonicalize(&db).unwrap()
    );
    // timings stay out of the report
    let text = String::from_utf8(ja).unwrap();
    assert!(!text.contains("seconds"));
    let t: Vec<Timing> =
        serde_json::from_str(&std::fs::read_to_string(da.join(TIMINGS_FILE)).unwrap()).unwrap();
    assert_eq!(t.len(), planned_checks(&a.report.scenario).unwrap().len());
}

#[test]
fn export_formats() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_scenario("appendix-smooth-division", &Overrides::default()).unwrap();
    let json = dir.path().join("r.json");
    export_report(&run.report, "json", &json).unwrap();
    let back = load_report(&json).unwrap();
    assert_eq!(
        back,
        RunReport {
            timings: Vec::new(),
            ..run.report.clone()
        }
    );
    let csv_path = dir.path().join("r.csv");
    export_report(&run.report, "csv-summary", &csv_path).unwrap();
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["id", "pass", "measured", "relation", "threshold", "detail"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), run.report.checks.len());
    assert!(rows.iter().all(|r| &r[1] == "pass"));
    assert_eq!(
        export_report(&run.report, "xml", &dir.path().join("r.xml")),
        Err(Error::UnknownFormat("xml".into()))
    );
    assert!(matches!(
        export_report(
            &run.report,
            "json",
            &dir.path().join("missing").join("r.json")
        ),
        Err(Error::IoFailure(_))
    ));
}

#[test]
fn identity_grid_plot_is_a_lattice() {
    let h = DualMetric::Rotational(RotationalProfile::RoundSphere);
    let cfg = IntegratorConfig::default();
    let grid = build_return_map_grid(
        &h,
        &SectionSpec::equator(),
        &GridSpec::interior(TAU, 8, 8),
        &cfg,
    )
    .unwrap();
    let style = PlotStyle::default();
    let svg = render_section_plot(&PlotInput::ReturnGrid(&grid), &style).unwrap();
    assert_eq!(svg.matches("<circle").count(), 64);
    assert!(!svg.contains("<line"));
    assert_eq!(
        svg,
        render_section_plot(&PlotInput::ReturnGrid(&grid), &style).unwrap()
    );
    let empty: Vec<Vec<[f64; 2]>> = vec![Vec::new()];
    assert_eq!(
        render_section_plot(&PlotInput::Iterates(&empty), &style),
        Err(Error::EmptyInput)
    );
}

#[test]
fn katok_iterates_lie_on_circles() {
    let h = geoflow_core::metrics::build_katok_family(
        RotationalProfile::RoundSphere,
        geoflow_core::profiles::CutoffPair::new(0.5, 1.25, 1.75).unwrap(),
        DEFAULT_ALPHA,
    )
    .unwrap();
    let map = ReturnMap::new(&h, &SectionSpec::equator(), &IntegratorConfig::default()).unwrap();
    let orbits: Vec<Vec<[f64; 2]>> = [0.2, 0.5, 0.8, 1.1, 1.4]
        .iter()
        .map(|&u| {
            let p = map.section().state_at(&h, 1.0, u).unwrap();
            map.orbit(&p, 40).unwrap().iter().map(|r| r.image).collect()
        })
        .collect();
    for o in &orbits {
        let (lo, hi) = o
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p[1]), b.max(p[1]))
            });
        assert!(hi - lo < 1e-7);
    }
    let svg = render_section_plot(&PlotInput::Iterates(&orbits), &PlotStyle::default()).unwrap();
    assert_eq!(svg.matches("<g fill=").count(), 5);
    assert_eq!(svg.matches("<circle").count(), 200);
}

#[test]
fn selected_stages_reuse_full_run_seeds() {
    let s = resolve_scenario("round-sphere-baseline", &Overrides::default()).unwrap();
    let full = run_resolved(s.clone()).unwrap();
    let part = run_stages(s.clone(), Some(&["conservation"])).unwrap();
    assert_eq!(ids(&part.report), ["conservation-h", "conservation-xi1"]);
    assert_eq!(
        part.report.checks[..],
        full.report.checks[full.report.checks.len() - 2..]
    );
    assert!(matches!(
        run_stages(s, Some(&["tube"])),
        Err(Error::ConfigInvalid { .. })
    ));
}
