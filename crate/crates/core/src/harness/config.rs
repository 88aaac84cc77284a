use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{BenchmarkMap, EntropyConfig, TubePlan};
use crate::error::{Error, Result};
use crate::flow::IntegratorConfig;
use crate::metrics::{MetricSpec, DEFAULT_ALPHA};
use crate::profiles::{make_spliced_profile, RotationalProfile};
use crate::sections::{BoundaryExtensionSpec, DivisionConfig, SectionSpec};

/// Registered scenario names.
pub const SCENARIOS: [&str; 5] = [
    "round-sphere-baseline",
    "katok-sphere",
    "katok-torus",
    "benchmark-maps",
    "appendix-smooth-division",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricFamily {
    Rotational,
    Katok,
}

/// Metric parameters; the profile lives at the top level of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    pub family: MetricFamily,
    pub a0: f64,
    pub a1: f64,
    pub b: f64,
    pub alpha: f64,
    #[serde(default)]
    pub reversible: bool,
}

impl MetricParams {
    fn rotational() -> Self {
        MetricParams {
            family: MetricFamily::Rotational,
            ..Self::katok()
        }
    }

    fn katok() -> Self {
        MetricParams {
            family: MetricFamily::Katok,
            a0: 0.5,
            a1: 1.25,
            b: 1.75,
            alpha: DEFAULT_ALPHA,
            reversible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxiomPlan {
    pub samples: usize,
    pub rel_tol: f64,
}

impl Default for AxiomPlan {
    fn default() -> Self {
        AxiomPlan {
            samples: 1000,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalityPlan {
    pub samples: usize,
    pub inside_tol: f64,
}

impl Default for LocalityPlan {
    fn default() -> Self {
        LocalityPlan {
            samples: 1000,
            inside_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicityPlan {
    pub samples: usize,
    /// Cone parameter `a` of the sampled set `U_a`.
    pub cone: f64,
    pub tol: f64,
}

impl Default for PeriodicityPlan {
    fn default() -> Self {
        PeriodicityPlan {
            samples: 50,
            cone: 0.5,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutingPlan {
    pub samples: usize,
    /// Comparison times `2π k / checkpoints`, `k = 1..=checkpoints`.
    pub checkpoints: usize,
    pub tol: f64,
}

impl Default for CommutingPlan {
    fn default() -> Self {
        CommutingPlan {
            samples: 10,
            checkpoints: 8,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReversalPlan {
    pub samples: usize,
    pub even_tol: f64,
    pub seam_points: usize,
    pub seam_step: f64,
    pub jet_tol: f64,
}

impl Default for ReversalPlan {
    fn default() -> Self {
        ReversalPlan {
            samples: 1000,
            even_tol: 1e-12,
            seam_points: 20,
            seam_step: 1e-3,
            jet_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridPlan {
    pub ns: usize,
    pub nu: usize,
    pub identity_tol: f64,
    pub tau_tol: f64,
}

impl Default for GridPlan {
    fn default() -> Self {
        GridPlan {
            ns: 8,
            nu: 8,
            identity_tol: 1e-6,
            tau_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryPlan {
    pub extension: BoundaryExtensionSpec,
    pub tol: f64,
}

impl Default for BoundaryPlan {
    fn default() -> Self {
        BoundaryPlan {
            extension: BoundaryExtensionSpec::default(),
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivisionPlan {
    pub config: DivisionConfig,
    /// Parameter values at which the battery is evaluated.
    pub xs: Vec<f64>,
    /// Step of the central differences of `G` at `t = 0`.
    pub fd_step: f64,
    pub tol: f64,
    pub branch_tol: f64,
}

impl Default for DivisionPlan {
    fn default() -> Self {
        DivisionPlan {
            config: DivisionConfig::default(),
            xs: vec![-1.0, -0.3, 0.5, 1.7],
            fd_step: 2e-3,
            tol: 1e-4,
            branch_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConservationPlan {
    pub orbits: usize,
    pub time: f64,
    pub tol: f64,
}

impl Default for ConservationPlan {
    fn default() -> Self {
        ConservationPlan {
            orbits: 8,
            time: 100.0,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IteratePlan {
    pub orbits: usize,
    pub iterates: usize,
    /// Range of the annulus angle of the starting points.
    pub u_range: [f64; 2],
    /// Starting point and length of the rotation-number run.
    pub rotation_start: [f64; 2],
    pub rotation_iterates: usize,
    pub tol: f64,
}

impl Default for IteratePlan {
    fn default() -> Self {
        IteratePlan {
            orbits: 5,
            iterates: 1000,
            u_range: [0.3, 1.3],
            rotation_start: [0.5, 0.2],
            rotation_iterates: 20,
            tol: 1e-6,
        }
    }
}

/// Point cloud, time grid and scales of one entropy estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyPlan {
    pub cloud: usize,
    pub times: Vec<usize>,
    pub eps: Vec<f64>,
    /// Sampling box: `(s, u)` on a section, `(x1, x2, θ)` for a flow.
    pub region: Vec<[f64; 2]>,
    /// Time step of the flow map.
    pub dt: f64,
    /// Absolute bound for zero-entropy systems, relative error otherwise.
    pub tol: f64,
    pub fit: EntropyConfig,
}

impl Default for EntropyPlan {
    fn default() -> Self {
        EntropyPlan {
            cloud: 2000,
            times: (0..=12).collect(),
            eps: vec![0.2, 0.1],
            region: Vec::new(),
            dt: 1.0,
            tol: 0.05,
            fit: EntropyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkEntropy {
    pub map: BenchmarkMap,
    pub plan: EntropyPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphPlan {
    /// Clairaut value of the sampled level set.
    pub clairaut: f64,
    pub samples: usize,
    pub bins: Vec<usize>,
    pub gap_tol: f64,
}

impl Default for GraphPlan {
    fn default() -> Self {
        GraphPlan {
            clairaut: 0.1,
            samples: 40_000,
            bins: vec![32, 64, 128],
            gap_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationPlan {
    pub rotating_clairaut: f64,
    /// Total time `2T`; the first comparison uses `[0, T]`.
    pub rotating_time: f64,
    pub stability_tol: f64,
    pub trapped_clairaut: f64,
    pub trapped_time: f64,
    pub turning_tol: f64,
}

impl Default for DeviationPlan {
    fn default() -> Self {
        DeviationPlan {
            rotating_clairaut: 0.12,
            rotating_time: 800.0,
            stability_tol: 0.05,
            trapped_clairaut: 0.995,
            trapped_time: 1000.0,
            turning_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeCheckPlan {
    /// Ensemble settings; the harness replaces `seed` with the stage seed.
    pub plan: TubePlan,
    pub gap_tol: f64,
    pub min_witnesses: usize,
}

impl Default for TubeCheckPlan {
    fn default() -> Self {
        TubeCheckPlan {
            plan: TubePlan::default(),
            gap_tol: 1e-6,
            min_witnesses: 5,
        }
    }
}

/// Estimators, grids and tolerances. Each scenario reads the parts it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisPlan {
    pub axioms: AxiomPlan,
    pub locality: LocalityPlan,
    pub periodicity: PeriodicityPlan,
    pub commuting: CommutingPlan,
    pub reversal: ReversalPlan,
    pub grid: GridPlan,
    pub boundary: BoundaryPlan,
    pub division: DivisionPlan,
    pub conservation: ConservationPlan,
    pub iterates: IteratePlan,
    pub entropy: EntropyPlan,
    pub benchmarks: Vec<BenchmarkEntropy>,
    pub graphs: GraphPlan,
    pub deviation: DeviationPlan,
    pub tube: TubeCheckPlan,
}

impl AnalysisPlan {
    fn tolerances(&self) -> Vec<(&'static str, f64)> {
        let mut t = vec![
            ("analysis.axioms.rel_tol", self.axioms.rel_tol),
            ("analysis.locality.inside_tol", self.locality.inside_tol),
            ("analysis.periodicity.tol", self.periodicity.tol),
            ("analysis.commuting.tol", self.commuting.tol),
            ("analysis.reversal.even_tol", self.reversal.even_tol),
            ("analysis.reversal.jet_tol", self.reversal.jet_tol),
            ("analysis.reversal.seam_step", self.reversal.seam_step),
            ("analysis.grid.identity_tol", self.grid.identity_tol),
            ("analysis.grid.tau_tol", self.grid.tau_tol),
            ("analysis.boundary.tol", self.boundary.tol),
            ("analysis.division.fd_step", self.division.fd_step),
            ("analysis.division.tol", self.division.tol),
            ("analysis.division.branch_tol", self.division.branch_tol),
            ("analysis.conservation.time", self.conservation.time),
            ("analysis.conservation.tol", self.conservation.tol),
            ("analysis.iterates.tol", self.iterates.tol),
            ("analysis.entropy.dt", self.entropy.dt),
            ("analysis.entropy.tol", self.entropy.tol),
            ("analysis.graphs.gap_tol", self.graphs.gap_tol),
            (
                "analysis.deviation.stability_tol",
                self.deviation.stability_tol,
            ),
            ("analysis.deviation.turning_tol", self.deviation.turning_tol),
            ("analysis.tube.gap_tol", self.tube.gap_tol),
        ];
        for b in &self.benchmarks {
            t.push(("analysis.benchmarks.plan.tol", b.plan.tol));
        }
        t
    }
}

/// A named experiment: profile, metric, integrator, section and analysis
/// plan together with the seed of its random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub profile: RotationalProfile,
    pub metric: MetricParams,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub section: SectionSpec,
    #[serde(default)]
    pub analysis: AnalysisPlan,
    pub scenario: ScenarioMeta,
}

impl Scenario {
    /// Built-in defaults of a registered scenario.
    pub fn defaults(name: &str) -> Result<Scenario> {
        let meta = ScenarioMeta {
            name: name.to_string(),
            seed: 7,
        };
        let base = |profile, metric| Scenario {
            profile,
            metric,
            integrator: IntegratorConfig::default(),
            section: SectionSpec::equator(),
            analysis: AnalysisPlan::default(),
            scenario: meta.clone(),
        };
        let torus = || make_spliced_profile(4.0, 0.25);
        let s = match name {
            "round-sphere-baseline" => {
                base(RotationalProfile::RoundSphere, MetricParams::rotational())
            }
            "katok-sphere" => {
                let mut s = base(RotationalProfile::RoundSphere, MetricParams::katok());
                s.analysis.entropy = EntropyPlan {
                    times: (0..=40).step_by(2).collect(),
                    eps: vec![1.5, 1.2, 1.0, 0.8],
                    region: vec![[0.0, TAU], [0.3, 1.3]],
                    ..EntropyPlan::default()
                };
                s
            }
            "katok-torus" => {
                let mut s = base(torus()?, MetricParams::katok());
                s.section = SectionSpec::az([0, 1], 2.0);
                s.analysis.entropy = EntropyPlan {
                    times: (0..=40).step_by(2).collect(),
                    eps: vec![0.6, 0.5, 0.4],
                    region: vec![[0.0, 1.0], [-0.5, 0.5], [0.0, 1.0]],
                    ..EntropyPlan::default()
                };
                s
            }
            "benchmark-maps" => {
                let mut s = base(RotationalProfile::RoundSphere, MetricParams::rotational());
                let zero = |map| BenchmarkEntropy {
                    map,
                    plan: EntropyPlan {
                        tol: 0.02,
                        ..EntropyPlan::default()
                    },
                };
                s.analysis.benchmarks = vec![
                    zero(BenchmarkMap::Identity),
                    zero(BenchmarkMap::Rotation { shift: 0.618 }),
                    BenchmarkEntropy {
                        map: BenchmarkMap::Doubling,
                        plan: EntropyPlan {
                            tol: 0.15,
                            ..EntropyPlan::default()
                        },
                    },
                    BenchmarkEntropy {
                        map: BenchmarkMap::Cat,
                        plan: EntropyPlan {
                            times: (0..=10).collect(),
                            eps: vec![0.45, 0.4, 0.35, 0.3],
                            tol: 0.10,
                            ..EntropyPlan::default()
                        },
                    },
                ];
                s.analysis.iterates.rotation_iterates = 200;
                s.analysis.iterates.tol = 1e-12;
                s
            }
            "appendix-smooth-division" => {
                base(RotationalProfile::RoundSphere, MetricParams::rotational())
            }
            other => return Err(Error::UnknownScenario(other.to_string())),
        };
        Ok(s)
    }

    /// Metric description built from the profile and metric parameters.
    pub fn metric_spec(&self) -> MetricSpec {
        match self.metric.family {
            MetricFamily::Rotational => MetricSpec::Rotational {
                profile: self.profile.clone(),
            },
            MetricFamily::Katok => MetricSpec::Katok {
                profile: self.profile.clone(),
                a0: self.metric.a0,
                a1: self.metric.a1,
                b: self.metric.b,
                alpha: self.metric.alpha,
                reversible: self.metric.reversible,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !SCENARIOS.contains(&self.scenario.name.as_str()) {
            return Err(Error::UnknownScenario(self.scenario.name.clone()));
        }
        self.integrator.validate()?;
        self.section.validate()?;
        for (path, v) in self.analysis.tolerances() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid {
                    path: path.into(),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// User-supplied changes on top of a scenario's defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Parsed config file, merged key by key into the defaults.
    pub config: Option<Value>,
    /// `dotted.path=value` assignments applied after the file.
    pub sets: Vec<String>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn with_seed(seed: u64) -> Self {
        Overrides {
            seed: Some(seed),
            ..Overrides::default()
        }
    }

    pub fn set(mut self, assignment: impl Into<String>) -> Self {
        self.sets.push(assignment.into());
        self
    }
}

/// Read a JSON config file.
pub fn load_config_file(path: &std::path::Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            // a different tagged variant replaces the object wholesale
            if b.contains_key("kind") && o.contains_key("kind") && b.get("kind") != o.get("kind") {
                *b = o.clone();
                return;
            }
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let invalid = |message: String| Error::ConfigInvalid {
        path: path.to_string(),
        message,
    };
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(invalid("empty path segment".into()));
    }
    let mut cur = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| invalid(format!("`{seg}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| invalid(format!("index {idx} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(format!("`{seg}` is below a scalar"))),
        };
    }
    Ok(())
}

/// Defaults of `name`, then the config file, then `--set` assignments and
/// the seed, deserialized with the path of any offending key.
pub fn resolve_scenario(name: &str, overrides: &Overrides) -> Result<Scenario> {
    let defaults = Scenario::defaults(name)?;
    let mut v = serde_json::to_value(&defaults).map_err(|e| Error::ConfigInvalid {
        path: String::new(),
        message: e.to_string(),
    })?;
    if let Some(cfg) = &overrides.config {
        if !cfg.is_object() {
            return Err(Error::ConfigInvalid {
                path: String::new(),
                message: "config must be a JSON object".into(),
            });
        }
        merge(&mut v, cfg);
    }
    for a in &overrides.sets {
        let (key, raw) = a.split_once('=').ok_or_else(|| Error::ConfigInvalid {
            path: a.clone(),
            message: "expected key=value".into(),
        })?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut v, key.trim(), value)?;
    }
    if let Some(seed) = overrides.seed {
        set_path(&mut v, "scenario.seed", Value::from(seed))?;
    }
    let scenario: Scenario =
        serde_path_to_error::deserialize(v).map_err(|e| Error::ConfigInvalid {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    if scenario.scenario.name != name {
        return Err(Error::ConfigInvalid {
            path: "scenario.name".into(),
            message: format!(
                "config names `{}` but `{name}` was requested",
                scenario.scenario.name
            ),
        });
    }
    scenario.validate()?;
    Ok(scenario)
}
