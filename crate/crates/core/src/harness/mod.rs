//! Scenario runner: configuration, seeded stages, reports and run directories.
//!
//! Randomness comes from one ChaCha8 stream seeded with the scenario seed.
//! Every stage draws exactly one `u64` from it, in plan order, whether or not
//! it samples anything. Per-orbit generators are seeded with
//! `stage_seed ^ index`, so parallel ensembles do not depend on scheduling.

mod config;
mod plot;
mod scenarios;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::*;
pub use plot::{render_section_plot, PlotInput, PlotStyle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

/// One pass/fail check with its measured value and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub pass: bool,
    /// `None` when the measurement failed or was not finite.
    pub measured: Option<f64>,
    pub relation: Relation,
    pub threshold: Option<f64>,
    pub detail: Option<String>,
}

impl Check {
    fn compare(id: &str, measured: f64, relation: Relation, threshold: f64) -> Check {
        let pass = match relation {
            Relation::AtMost => measured <= threshold,
            Relation::AtLeast => measured >= threshold,
            Relation::Above => measured > threshold,
        };
        Check {
            id: id.to_string(),
            pass: pass && measured.is_finite(),
            measured: measured.is_finite().then_some(measured),
            relation,
            threshold: Some(threshold),
            detail: None,
        }
    }

    pub fn at_most(id: &str, measured: f64, threshold: f64) -> Check {
        Check::compare(id, measured, Relation::AtMost, threshold)
    }

    pub fn at_least(id: &str, measured: f64, threshold: f64) -> Check {
        Check::compare(id, measured, Relation::AtLeast, threshold)
    }

    pub fn above(id: &str, measured: f64, threshold: f64) -> Check {
        Check::compare(id, measured, Relation::Above, threshold)
    }

    pub fn failed(id: &str, detail: impl Into<String>) -> Check {
        Check {
            id: id.to_string(),
            pass: false,
            measured: None,
            relation: Relation::AtMost,
            threshold: None,
            detail: Some(detail.into()),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Check {
        self.detail = Some(detail.into());
        self
    }
}

/// Wall-clock time of a stage. Kept out of `report.json` so that reruns
/// compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// The resolved configuration, overrides included.
    pub scenario: Scenario,
    pub checks: Vec<Check>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub pass: bool,
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

impl RunReport {
    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn stage_seconds(&self, stage: &str) -> Option<f64> {
        self.timings
            .iter()
            .find(|t| t.stage == stage)
            .map(|t| t.seconds)
    }
}

/// A text file produced by a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(path: impl Into<String>, contents: impl Into<String>) -> Self {
        Artifact {
            path: path.into(),
            contents: contents.into(),
        }
    }
}

/// A finished run held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub report: RunReport,
    pub artifacts: Vec<Artifact>,
}

/// A stage and the checks it reports, in report order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stage: String,
    pub checks: Vec<String>,
}

/// The checks a scenario will report, enumerated before anything runs.
pub fn planned_checks(scenario: &Scenario) -> Result<Vec<StagePlan>> {
    scenarios::plan(scenario)
}

pub(crate) struct Runner {
    stream: ChaCha8Rng,
    plan: Vec<StagePlan>,
    selected: Vec<bool>,
    done: Vec<bool>,
    checks: Vec<Check>,
    artifacts: Vec<Artifact>,
    timings: Vec<Timing>,
}

impl Runner {
    fn new(seed: u64, plan: Vec<StagePlan>, selected: Vec<bool>) -> Self {
        Runner {
            stream: ChaCha8Rng::seed_from_u64(seed),
            selected,
            done: vec![false; plan.len()],
            plan,
            checks: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Run one planned stage. An error fails every check of the stage.
    /// Unselected stages still consume their seed.
    pub(crate) fn stage(
        &mut self,
        name: &str,
        f: impl FnOnce(u64, &mut Vec<Artifact>) -> Result<Vec<Check>>,
    ) {
        let idx = self
            .plan
            .iter()
            .position(|s| s.stage == name)
            .unwrap_or_else(|| panic!("stage `{name}` is not in the plan"));
        let seed = self.stream.next_u64();
        if !self.selected[idx] {
            return;
        }
        let start = Instant::now();
        let mut arts = Vec::new();
        let outcome = f(seed, &mut arts);
        self.timings.push(Timing {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        self.done[idx] = true;
        let ids = self.plan[idx].checks.clone();
        match outcome {
            Ok(produced) => {
                for id in &ids {
                    let c = produced
                        .iter()
                        .find(|c| &c.id == id)
                        .cloned()
                        .unwrap_or_else(|| Check::failed(id, "check not produced"));
                    self.checks.push(c);
                }
                self.artifacts.extend(arts);
            }
            Err(e) => {
                for id in &ids {
                    self.checks
                        .push(Check::failed(id, format!("{}: {e}", e.code())));
                }
            }
        }
    }

    fn finish(mut self, scenario: Scenario) -> ScenarioRun {
        for (i, s) in self.plan.iter().enumerate() {
            if self.selected[i] && !self.done[i] {
                for id in &s.checks {
                    self.checks.push(Check::failed(id, "stage not run"));
                }
            }
        }
        let mut paths: Vec<String> = self.artifacts.iter().map(|a| a.path.clone()).collect();
        paths.push(SUMMARY_FILE.into());
        paths.push(TIMINGS_FILE.into());
        let pass = self.checks.iter().all(|c| c.pass);
        ScenarioRun {
            report: RunReport {
                scenario,
                checks: self.checks,
                artifacts: paths,
                pass,
                timings: self.timings,
            },
            artifacts: self.artifacts,
        }
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMINGS_FILE: &str = "timings.json";

/// Resolve `name` with `overrides` and run it in memory.
pub fn run_scenario(name: &str, overrides: &Overrides) -> Result<ScenarioRun> {
    let scenario = resolve_scenario(name, overrides)?;
    run_resolved(scenario)
}

/// Run an already resolved scenario.
pub fn run_resolved(scenario: Scenario) -> Result<ScenarioRun> {
    run_stages(scenario, None)
}

/// Run only the named stages (all when `None`). Seeds match a full run.
pub fn run_stages(scenario: Scenario, stages: Option<&[&str]>) -> Result<ScenarioRun> {
    scenario.validate()?;
    let plan = scenarios::plan(&scenario)?;
    let selected = match stages {
        None => vec![true; plan.len()],
        Some(names) => {
            for n in names {
                if !plan.iter().any(|p| p.stage == *n) {
                    return Err(Error::ConfigInvalid {
                        path: "stage".into(),
                        message: format!(
                            "scenario `{}` has no stage `{n}`",
                            scenario.scenario.name
                        ),
                    });
                }
            }
            plan.iter()
                .map(|p| names.contains(&p.stage.as_str()))
                .collect()
        }
    };
    let mut runner = Runner::new(scenario.scenario.seed, plan, selected);
    scenarios::execute(&scenario, &mut runner);
    Ok(runner.finish(scenario))
}

/// Write a run to `out_root/<scenario>/<timestamp>/` and point
/// `out_root/<scenario>/latest` at it. Returns the run directory.
pub fn write_run(run: &ScenarioRun, out_root: &Path) -> Result<PathBuf> {
    let parent = out_root.join(&run.report.scenario.scenario.name);
    std::fs::create_dir_all(&parent)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut dir = parent.join(&stamp);
    let mut k = 1;
    while dir.exists() {
        dir = parent.join(format!("{stamp}-{k}"));
        k += 1;
    }
    std::fs::create_dir(&dir)?;
    for a in &run.artifacts {
        std::fs::write(dir.join(&a.path), &a.contents)?;
    }
    export_report(&run.report, "json", &dir.join(REPORT_FILE))?;
    export_report(&run.report, "csv-summary", &dir.join(SUMMARY_FILE))?;
    let timings = serde_json::to_string_pretty(&run.report.timings)
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    std::fs::write(dir.join(TIMINGS_FILE), timings + "\n")?;
    update_latest(&parent, &dir)?;
    Ok(dir)
}

fn update_latest(parent: &Path, dir: &Path) -> Result<()> {
    let link = parent.join("latest");
    let target = dir.file_name().expect("run directory has a name");
    if link.symlink_metadata().is_ok() {
        if link.is_dir() && !link.symlink_metadata()?.file_type().is_symlink() {
            std::fs::remove_dir_all(&link)?;
        } else {
            std::fs::remove_file(&link)?;
        }
    }
    #[cfg(unix)]
    std::os::unix::fs::symlink(target, &link)?;
    #[cfg(not(unix))]
    std::fs::write(&link, target.to_string_lossy().as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvSummary,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv-summary" => Ok(ReportFormat::CsvSummary),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// Serialize a report: pretty JSON, or one CSV row per check.
pub fn format_report(report: &RunReport, format: ReportFormat) -> Result<String> {
    let io = |e: &dyn std::fmt::Display| Error::IoFailure(e.to_string());
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report).map_err(|e| io(&e))? + "\n"),
        ReportFormat::CsvSummary => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["id", "pass", "measured", "relation", "threshold", "detail"])
                .map_err(|e| io(&e))?;
            for c in &report.checks {
                let num = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
                let rel = match c.relation {
                    Relation::AtMost => "<=",
                    Relation::AtLeast => ">=",
                    Relation::Above => ">",
                };
                w.write_record([
                    c.id.as_str(),
                    if c.pass { "pass" } else { "fail" },
                    &num(c.measured),
                    rel,
                    &num(c.threshold),
                    c.detail.as_deref().unwrap_or(""),
                ])
                .map_err(|e| io(&e))?;
            }
            let bytes = w.into_inner().map_err(|e| io(&e))?;
            String::from_utf8(bytes).map_err(|e| io(&e))
        }
    }
}

/// Write a report in `format` (`json` or `csv-summary`) to `path`.
pub fn export_report(report: &RunReport, format: &str, path: &Path) -> Result<()> {
    let f: ReportFormat = format.parse()?;
    std::fs::write(path, format_report(report, f)?)?;
    Ok(())
}

/// Reload a JSON report.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::IoFailure(e.to_string()))
}
