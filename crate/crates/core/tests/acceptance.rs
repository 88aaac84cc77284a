//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::process::ExitCode;

use geoflow_core::harness::*;

struct Outcome {
    pass: bool,
    note: String,
}

fn checks(report: &RunReport, ids: &[&str]) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for id in ids {
        match report.check(id) {
            Some(c) => {
                pass &= c.pass;
                let m = c.measured.map_or("n/a".into(), |v| format!("{v:.3e}"));
                let t = c.threshold.map_or("n/a".into(), |v| format!("{v:.1e}"));
                let mut s = format!("{id}={m} (limit {t})");
                if !c.pass {
                    if let Some(d) = &c.detail {
                        s.push_str(&format!(" [{d}]"));
                    }
                }
                notes.push(s);
            }
            None => {
                pass = false;
                notes.push(format!("{id} missing"));
            }
        }
    }
    Outcome {
        pass,
        note: notes.join(", "),
    }
}

fn timed(mut o: Outcome, label: &str, seconds: f64, limit: f64) -> Outcome {
    o.pass &= seconds < limit;
    o.note
        .push_str(&format!("; {label} {seconds:.2}s (limit {limit}s)"));
    o
}

fn merge(parts: Vec<Outcome>) -> Outcome {
    Outcome {
        pass: parts.iter().all(|p| p.pass),
        note: parts
            .into_iter()
            .map(|p| p.note)
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn run(name: &str) -> RunReport {
    match run_scenario(name, &Overrides::with_seed(7)) {
        Ok(r) => r.report,
        Err(e) => panic!("{name}: {e}"),
    }
}

fn main() -> ExitCode {
    let baseline = run("round-sphere-baseline");
    let sphere = run("katok-sphere");
    let torus = run("katok-torus");
    let maps = run("benchmark-maps");
    let division = run("appendix-smooth-division");
    let secs = |r: &RunReport, stage: &str| r.stage_seconds(stage).unwrap_or(f64::INFINITY);

    let mut rows: Vec<(u8, &str, Outcome)> = vec![(
        1,
        "Finsler axioms for H0 and H_alpha",
        timed(
            checks(&sphere, &["axioms-h0", "axioms-katok"]),
            "runtime",
            secs(&sphere, "axioms"),
            5.0,
        ),
    )];
    rows.push((
        2,
        "locality of the Katok perturbation",
        checks(&sphere, &["locality-outside", "locality-inside"]),
    ));
    rows.push((
        3,
        "2pi-periodicity on U_0.5",
        timed(
            checks(&baseline, &["periodicity"]),
            "runtime",
            secs(&baseline, "periodicity"),
            30.0,
        ),
    ));
    rows.push((
        4,
        "commuting-flow identity",
        checks(&sphere, &["commuting-flows"]),
    ));
    rows.push((
        5,
        "reversibilization",
        checks(&sphere, &["reversal-even", "reversal-seam-jets"]),
    ));
    rows.push((
        6,
        "Birkhoff return map of the round sphere",
        checks(
            &baseline,
            &[
                "return-identity",
                "return-time",
                "boundary-tau-fit",
                "boundary-tau-division",
            ],
        ),
    ));
    rows.push((
        7,
        "smooth division identity",
        checks(&division, &["division-k0", "division-k1", "division-k2"]),
    ));
    rows.push((
        8,
        "conservation of H and xi1",
        merge(
            [&baseline, &sphere, &torus]
                .iter()
                .map(|r| checks(r, &["conservation-h", "conservation-xi1"]))
                .collect(),
        ),
    ));
    let entropy_ids: Vec<&str> = maps
        .checks
        .iter()
        .filter(|c| c.id.starts_with("entropy-"))
        .map(|c| c.id.as_str())
        .collect();
    let clouds_ok = maps
        .scenario
        .analysis
        .benchmarks
        .iter()
        .all(|b| b.plan.cloud == 2000)
        && sphere.scenario.analysis.entropy.cloud == 2000
        && torus.scenario.analysis.entropy.cloud == 2000;
    let entropy_time = secs(&maps, "entropy") + secs(&sphere, "entropy") + secs(&torus, "entropy");
    let mut e9 = merge(vec![
        checks(&maps, &entropy_ids),
        checks(&sphere, &["entropy-return-map"]),
        checks(&torus, &["entropy-time-one-flow"]),
    ]);
    e9.pass &= clouds_ok && entropy_ids.len() == 4;
    rows.push((
        9,
        "entropy estimator",
        timed(e9, "total runtime", entropy_time, 300.0),
    ));
    rows.push((
        10,
        "invariant graphs and deviation",
        checks(
            &torus,
            &[
                "graph-level-sets",
                "graph-two-branch-control",
                "deviation-rotating",
                "deviation-trapped",
            ],
        ),
    ));
    rows.push((
        11,
        "tube diagnostics",
        checks(
            &torus,
            &[
                "tube-gap-conservation",
                "tube-witnesses",
                "tube-boundary-monotone",
            ],
        ),
    ));

    let dir = tempfile::tempdir().expect("temp dir");
    let a = run_scenario("katok-torus", &Overrides::with_seed(7))
        .and_then(|r| write_run(&r, dir.path()));
    let b = run_scenario("katok-torus", &Overrides::with_seed(7))
        .and_then(|r| write_run(&r, dir.path()));
    let same = match (a, b) {
        (Ok(a), Ok(b)) => {
            let ra = std::fs::read(a.join(REPORT_FILE)).ok();
            ra.is_some() && ra == std::fs::read(b.join(REPORT_FILE)).ok()
        }
        _ => false,
    };
    rows.push((
        12,
        "determinism of katok-torus --seed 7",
        Outcome {
            pass: same,
            note: if same {
                "report.json byte-identical".into()
            } else {
                "reports differ".into()
            },
        },
    ));

    let mut all = true;
    for (k, title, o) in &rows {
        all &= o.pass;
        println!(
            "criterion {k:>2} {} {title}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.note
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
