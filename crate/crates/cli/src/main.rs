//! `geoflow`: run scenarios and dump orbits, sections and diagnostics.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoflow_core::analysis::{rotation_number, unit_covector};
use geoflow_core::flow::integrate_orbit;
use geoflow_core::harness::{
    load_config_file, render_section_plot, resolve_scenario, run_stages, write_run, Overrides,
    PlotInput, PlotStyle, RunReport, Scenario, ScenarioRun,
};
use geoflow_core::metrics::{validate_axioms, SampleSpec};
use geoflow_core::sections::{build_return_map_grid, GridSpec, ReturnMap, Section};
use geoflow_core::{Error, OrbitTrace, RotationalProfile};

#[derive(Parser)]
#[command(
    name = "geoflow",
    version,
    about = "Finsler geodesic flows on the sphere and torus"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON file merged over the scenario defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `metric.alpha=0.02`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Scenario supplying metric, section and integrator settings.
    #[arg(long, global = true, default_value = "katok-torus")]
    scenario: String,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one unit-speed orbit and dump it as CSV and SVG.
    Simulate {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        x1: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        x2: f64,
        /// Direction of the covector, radians from the x1 axis.
        #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = 100.0)]
        time: f64,
    },
    /// Tabulate the first-return map on a grid of the section.
    Section {
        #[arg(long, default_value_t = 8)]
        ns: usize,
        #[arg(long, default_value_t = 8)]
        nu: usize,
    },
    /// Rotation number of the return map from one section point.
    Rotation {
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        s: f64,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        u: f64,
        #[arg(long, default_value_t = 200)]
        iterates: usize,
    },
    /// Run the entropy stage of the scenario.
    Entropy,
    /// Run the invariant-graph and deviation stages (katok-torus).
    Graphs,
    /// Run the tube stage (katok-torus).
    Tube,
    /// Check the Finsler axioms of the configured metric.
    Validate {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-10)]
        rel_tol: f64,
    },
    /// Run a whole scenario and write its report.
    Run { name: String },
}

fn overrides(c: &Common) -> Result<Overrides, Error> {
    Ok(Overrides {
        config: c.config.as_deref().map(load_config_file).transpose()?,
        sets: c.sets.clone(),
        seed: c.seed,
    })
}

fn scenario(c: &Common, name: &str) -> Result<Scenario, Error> {
    resolve_scenario(name, &overrides(c)?)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, contents)?;
    Ok(p)
}

fn csv_err(e: csv::Error) -> Error {
    Error::IoFailure(e.to_string())
}

fn orbit_csv(trace: &OrbitTrace) -> Result<String, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "x1", "x2", "xi1", "xi2", "lift_x1", "lift_x2"])
        .map_err(csv_err)?;
    for ((t, p), l) in trace
        .times
        .iter()
        .zip(&trace.states)
        .zip(&trace.lifted_base)
    {
        w.write_record(
            [*t, p.x1, p.x2, p.xi1, p.xi2, l[0], l[1]]
                .iter()
                .map(|v| format!("{v:e}")),
        )
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn print_report(report: &RunReport) {
    for c in &report.checks {
        let m = c.measured.map_or("n/a".to_string(), |v| format!("{v:.4e}"));
        let t = c
            .threshold
            .map_or("n/a".to_string(), |v| format!("{v:.1e}"));
        let rel = serde_json::to_value(c.relation).ok();
        let rel = rel.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        print!(
            "{} {:<32} {m} {rel} {t}",
            if c.pass { "PASS" } else { "FAIL" },
            c.id
        );
        match &c.detail {
            Some(d) => println!("  ({d})"),
            None => println!(),
        }
    }
    println!("overall: {}", if report.pass { "PASS" } else { "FAIL" });
}

fn finish(run: &ScenarioRun, out: &Path) -> Result<bool, Error> {
    let dir = write_run(run, out)?;
    print_report(&run.report);
    println!("report: {}", dir.display());
    Ok(run.report.pass)
}

fn stages(c: &Common, names: &[&str]) -> Result<bool, Error> {
    let run = run_stages(scenario(c, &c.scenario)?, Some(names))?;
    finish(&run, &c.out)
}

fn execute(cli: &Cli) -> Result<bool, Error> {
    let c = &cli.common;
    match &cli.command {
        Command::Run { name } => {
            let run = geoflow_core::harness::run_resolved(scenario(c, name)?)?;
            finish(&run, &c.out)
        }
        Command::Entropy => stages(c, &["entropy"]),
        Command::Graphs => stages(c, &["graphs", "deviation"]),
        Command::Tube => stages(c, &["tube"]),
        Command::Simulate {
            x1,
            x2,
            theta,
            time,
        } => {
            let s = scenario(c, &c.scenario)?;
            let h = s.metric_spec().build()?;
            let p0 = unit_covector(&h, *x1, *x2, *theta)?;
            let trace = integrate_orbit(&h, &p0, *time, &s.integrator)?;
            let svg = render_section_plot(
                &PlotInput::Orbit(&trace),
                &PlotStyle {
                    title: format!("orbit from ({x1}, {x2}), theta = {theta}"),
                    x_label: "x1".into(),
                    y_label: "x2".into(),
                    ..PlotStyle::default()
                },
            )?;
            let csv = write(&c.out, "orbit.csv", &orbit_csv(&trace)?)?;
            write(&c.out, "orbit.svg", &svg)?;
            let (dh, dxi1) = trace.max_drift();
            let summary = serde_json::json!({
                "points": trace.len(),
                "h_drift": dh,
                "xi1_drift": dxi1,
                "end": trace.last_state().map(|p| p.to_array()),
                "csv": csv.display().to_string(),
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("plain json")
            );
            Ok(true)
        }
        Command::Section { ns, nu } => {
            let s = scenario(c, &c.scenario)?;
            let h = s.metric_spec().build()?;
            let period = Section::new(&h, &s.section)?.s_period();
            let grid = build_return_map_grid(
                &h,
                &s.section,
                &GridSpec::interior(period, *ns, *nu),
                &s.integrator,
            )?;
            let svg = render_section_plot(
                &PlotInput::ReturnGrid(&grid),
                &PlotStyle {
                    title: format!("first-return map, {}", s.scenario.name),
                    ..PlotStyle::default()
                },
            )?;
            let csv = write(&c.out, "section.csv", &grid.to_csv())?;
            write(&c.out, "section.svg", &svg)?;
            let failed = grid.rows.iter().filter(|r| r.outcome.is_err()).count();
            println!(
                "{} points, {failed} without a return; table {}",
                grid.rows.len(),
                csv.display()
            );
            Ok(failed == 0)
        }
        Command::Rotation { s: s0, u, iterates } => {
            let s = scenario(c, &c.scenario)?;
            let h = s.metric_spec().build()?;
            let map = ReturnMap::new(&h, &s.section, &s.integrator)?;
            let est = rotation_number(&map, [*s0, *u], *iterates)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&est).expect("plain json")
            );
            Ok(true)
        }
        Command::Validate { samples, rel_tol } => {
            let s = scenario(c, &c.scenario)?;
            let h = s.metric_spec().build()?;
            let profile = h
                .profile()
                .cloned()
                .unwrap_or(RotationalProfile::RoundSphere);
            let spec = SampleSpec::for_profile(&profile, *samples, s.scenario.seed);
            let rep = validate_axioms(&h, &spec);
            let pass = rep.passes(*rel_tol);
            println!(
                "{}",
                serde_json::to_string_pretty(&rep).expect("plain json")
            );
            println!("axioms: {}", if pass { "PASS" } else { "FAIL" });
            Ok(pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(2)
        }
    }
}
